#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cumamba/blocks.hpp"
#include "cumamba/gradcheck.hpp"
#include "cumamba/objective.hpp"
#include "cumamba/ops.hpp"
#include "cumamba/ssm.hpp"
#include "cumamba/unet.hpp"

namespace cumamba {

namespace {

using Inputs = std::vector<std::pair<std::string, Tensor<double>>>;
using Rng = std::mt19937_64;

Tensor<double> uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor<double> t(std::move(shape));
    for (double& v : t.mutable_data()) v = dist(rng);
    return t;
}

// Entries with magnitude in [lo, hi] and random sign.
Tensor<double> away_from_zero(Shape shape, Rng& rng, double lo = 0.2, double hi = 1.0) {
    std::uniform_real_distribution<double> mag(lo, hi);
    Tensor<double> t(std::move(shape));
    for (double& v : t.mutable_data()) v = (rng() & 1 ? 1.0 : -1.0) * mag(rng);
    return t;
}

// Fixed random projection to a scalar.
std::function<Tensor<double>(const Tensor<double>&)> projector(Rng& rng) {
    const std::uint64_t seed = rng();
    return [seed](const Tensor<double>& y) {
        Rng local(seed);
        return ops::sum(ops::mul(y, uniform(y.shape(), local)));
    };
}

// Keeps LeakyReLU inputs inside residual blocks clear of the kink.
void offset_kink_biases(Module<double>& m, Rng& rng) {
    std::uniform_real_distribution<double> mag(0.2, 0.6);
    for (auto& p : m.parameters())
        if (p.name.find("smooth1.bias") != std::string::npos || p.name.find("conv1.bias") != std::string::npos)
            for (double& v : p.tensor.mutable_data()) v = (rng() & 1 ? 1.0 : -1.0) * mag(rng);
}

// Moves selective-SSM step sizes from their small initial range to [0.1, 0.8]
// so state paths carry gradients well above finite-difference roundoff.
void widen_step_sizes(Module<double>& m, Rng& rng) {
    std::uniform_real_distribution<double> dt(0.1, 0.8);
    for (auto& p : m.parameters())
        if (p.name.find("proj_dt.bias") != std::string::npos)
            for (double& v : p.tensor.mutable_data()) {
                const double d = dt(rng);
                v = d + std::log(-std::expm1(-d));
            }
}

Inputs with_parameters(Inputs inputs, Module<double>& m) {
    for (const auto& p : m.parameters()) inputs.emplace_back(p.name, p.tensor);
    return inputs;
}

class Suite {
public:
    explicit Suite(std::uint64_t seed) : rng_(seed) {}

    void run(const std::string& name, const std::function<Tensor<double>()>& loss, const Inputs& inputs,
             std::size_t max_entries = 0) {
        GradcheckOptions opt;
        opt.max_entries = max_entries;
        opt.seed = rng_();
        results_.push_back(gradcheck(name, loss, inputs, opt));
    }

    // Projects the output of f(inputs) to a scalar and checks it.
    void run_projected(const std::string& name, const std::function<Tensor<double>()>& f, const Inputs& inputs,
                       std::size_t max_entries = 0) {
        auto project = projector(rng_);
        run(name, [&] { return project(f()); }, inputs, max_entries);
    }

    Rng& rng() { return rng_; }
    std::vector<GradcheckResult> take() { return std::move(results_); }

private:
    Rng rng_;
    std::vector<GradcheckResult> results_;
};

void primitive_cases(Suite& s) {
    Rng& r = s.rng();
    {
        auto a = uniform({2, 3, 4}, r), b = uniform({4}, r);
        s.run_projected("add", [&] { return ops::add(a, b); }, {{"a", a}, {"b", b}});
        s.run_projected("sub", [&] { return ops::sub(b, a); }, {{"a", a}, {"b", b}});
        auto c = uniform({3, 1}, r);
        s.run_projected("mul", [&] { return ops::mul(a, c); }, {{"a", a}, {"c", c}});
    }
    {
        auto x = uniform({3, 5}, r, -2.0, 2.0);
        s.run_projected("exp", [&] { return ops::exp(x); }, {{"x", x}});
        s.run_projected("softplus", [&] { return ops::softplus(x); }, {{"x", x}});
        s.run_projected("silu", [&] { return ops::silu(x); }, {{"x", x}});
        s.run_projected("sigmoid", [&] { return ops::sigmoid(x); }, {{"x", x}});
        s.run_projected("neg", [&] { return ops::neg(x); }, {{"x", x}});
        s.run_projected("scale", [&] { return ops::scale(x, 0.75); }, {{"x", x}});
        s.run("sum", [&] { return ops::sum(ops::mul(x, x)); }, {{"x", x}});
        s.run("mean", [&] { return ops::mean(ops::mul(x, x)); }, {{"x", x}});
        auto k = away_from_zero({3, 5}, r);
        s.run_projected("leaky_relu", [&] { return ops::leaky_relu(k); }, {{"x", k}});
    }
    {
        auto a = uniform({3, 4}, r), b = uniform({4, 5}, r);
        s.run_projected("matmul", [&] { return ops::matmul(a, b); }, {{"a", a}, {"b", b}});
        auto x = uniform({2, 3, 4}, r), w = uniform({4, 5}, r), bias = uniform({5}, r);
        s.run_projected("linear", [&] { return ops::linear(x, w, bias); }, {{"x", x}, {"w", w}, {"bias", bias}});
        s.run_projected("reshape", [&] { return ops::reshape(x, {6, 4}); }, {{"x", x}});
        s.run_projected("permute", [&] { return ops::permute(x, {2, 0, 1}); }, {{"x", x}});
        auto y = uniform({2, 3, 2}, r);
        s.run_projected("concat_last", [&] { return ops::concat_last(x, y); }, {{"x", x}, {"y", y}});
        auto gamma = uniform({4}, r, 0.5, 1.5), beta = uniform({4}, r);
        s.run_projected("layer_norm", [&] { return ops::layer_norm(x, gamma, beta); },
                        {{"x", x}, {"gamma", gamma}, {"beta", beta}});
    }
    {
        auto x = uniform({2, 4, 4, 3}, r);
        auto b3 = uniform({3}, r), b2 = uniform({2}, r);
        auto w1 = uniform({3, 2}, r);
        s.run_projected("conv_pointwise",
                        [&] { return ops::conv2d(x, w1, b2, ops::ConvKind::kPointwise1x1); },
                        {{"x", x}, {"w", w1}, {"bias", b2}});
        auto wd = uniform({3, 3, 3}, r);
        s.run_projected("conv_depthwise",
                        [&] { return ops::conv2d(x, wd, b3, ops::ConvKind::kDepthwise3x3); },
                        {{"x", x}, {"w", wd}, {"bias", b3}});
        auto wp = uniform({3, 3, 3, 2}, r);
        s.run_projected("conv_plain", [&] { return ops::conv2d(x, wp, b2, ops::ConvKind::kPlain3x3); },
                        {{"x", x}, {"w", wp}, {"bias", b2}});
        auto ws = uniform({2, 2, 3, 2}, r);
        s.run_projected("conv_strided", [&] { return ops::conv2d(x, ws, b2, ops::ConvKind::kStrided2x2); },
                        {{"x", x}, {"w", ws}, {"bias", b2}});
        auto wt = uniform({3, 2, 2, 2}, r);
        s.run_projected("conv_transposed",
                        [&] { return ops::conv2d(x, wt, b2, ops::ConvKind::kTransposed2x2); },
                        {{"x", x}, {"w", wt}, {"bias", b2}});
    }
    {
        auto x = uniform({2, 7, 3}, r), w = uniform({4, 3}, r), b = uniform({3}, r);
        s.run_projected("causal_conv1d", [&] { return ops::causal_conv1d(x, w, b); },
                        {{"x", x}, {"w", w}, {"bias", b}});
    }
}

void scan_cases(Suite& s) {
    Rng& r = s.rng();
    const std::size_t B = 2, L = 9, C = 3, N = 4;
    auto u = uniform({B, L, C}, r);
    auto delta = uniform({B, L, C}, r, 0.05, 0.8);
    auto A = uniform({C, N}, r, -1.5, -0.1);
    auto Bt = uniform({B, L, N}, r), Ct = uniform({B, L, N}, r);
    auto D = uniform({C}, r);
    const Inputs inputs{{"u", u}, {"delta", delta}, {"A", A}, {"B", Bt}, {"C", Ct}, {"D", D}};
    s.run_projected("selective_scan_sequential",
                    [&] { return ssm::selective_scan(u, delta, A, Bt, Ct, D, {false, 4}); }, inputs);
    s.run_projected("selective_scan_parallel",
                    [&] { return ssm::selective_scan(u, delta, A, Bt, Ct, D, {true, 4}); }, inputs);
}

void block_cases(Suite& s) {
    Rng& r = s.rng();
    InitRng init(r());
    {
        ssm::SelectiveSsm<double> block({4, 4, 2, 3}, init);
        widen_step_sizes(block, r);
        auto x = uniform({2, 6, 4}, r);
        s.run_projected("selective_ssm_block", [&] { return block.forward(x); }, with_parameters({{"x", x}}, block));
    }
    const BlockConfig cfg{4, 4, 4, 4, 2, 3};
    auto x = uniform({1, 4, 4, 4}, r);
    {
        SpatialSsmBlock<double> block(cfg, init);
        offset_kink_biases(block, r);
        widen_step_sizes(block, r);
        s.run_projected("spatial_ssm_block", [&] { return block.forward(x); }, with_parameters({{"x", x}}, block));
    }
    {
        ChannelSsmBlock<double> block(cfg, init);
        offset_kink_biases(block, r);
        widen_step_sizes(block, r);
        s.run_projected("channel_ssm_block", [&] { return block.forward(x); }, with_parameters({{"x", x}}, block));
    }
    {
        CuMambaBlock<double> block(cfg, BlockKind::kCombined, init);
        offset_kink_biases(block, r);
        widen_step_sizes(block, r);
        s.run_projected("combined_block", [&] { return block.forward(x); }, with_parameters({{"x", x}}, block));
    }
    {
        ResBlock<double> block(cfg, init);
        offset_kink_biases(block, r);
        s.run_projected("res_block", [&] { return block.forward(x); }, with_parameters({{"x", x}}, block));
    }
}

void network_cases(Suite& s) {
    Rng& r = s.rng();
    CuMambaConfig c;
    c.levels = 2;
    c.blocks_per_level = {1, 1};
    c.base_width = 4;
    c.state_size = 4;
    c.patch_h = c.patch_w = 8;
    c.kind = BlockKind::kCombined;
    CuMambaNet<double> net(c, r());
    // The output projection starts at zero, which would hide every upstream gradient.
    std::uniform_real_distribution<double> small(-0.2, 0.2);
    for (auto& p : net.parameters())
        if (p.name.rfind("out_conv", 0) == 0)
            for (double& v : p.tensor.mutable_data()) v = small(r);
    offset_kink_biases(net, r);
    widen_step_sizes(net, r);
    auto image = uniform({1, 8, 8, 3}, r, 0.0, 1.0);
    auto target = uniform({1, 8, 8, 3}, r, 0.0, 1.0);
    s.run("unet_restoration_loss", [&] { return restoration_loss(net.forward(image), target); },
          with_parameters({{"image", image}}, net), 24);

    auto pred = uniform({2, 6, 8, 3}, r, 0.0, 1.0);
    auto clean = uniform({2, 6, 8, 3}, r, 0.0, 1.0);
    s.run("restoration_loss", [&] { return restoration_loss(pred, clean); }, {{"pred", pred}, {"target", clean}});
    s.run("charbonnier", [&] { return charbonnier(pred, clean); }, {{"pred", pred}});
    s.run("fourier_l1", [&] { return fourier_l1(pred, clean); }, {{"pred", pred}});
}

}  // namespace

std::vector<GradcheckResult> run_gradcheck_suite(std::uint64_t seed) {
    Suite s(seed);
    primitive_cases(s);
    scan_cases(s);
    block_cases(s);
    network_cases(s);
    return s.take();
}

}  // namespace cumamba
