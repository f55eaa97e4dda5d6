#include "cumamba/blocks.hpp"

#include <string>

#include "cumamba/ops.hpp"

namespace cumamba {

using ops::ConvKind;

std::string block_kind_name(BlockKind kind) {
    switch (kind) {
        case BlockKind::kResBlock: return "resblock";
        case BlockKind::kSpatial: return "spatial";
        case BlockKind::kChannel: return "channel";
        case BlockKind::kCombined: return "combined";
    }
    return "combined";
}

BlockKind parse_block_kind(const std::string& name) {
    if (name == "resblock") return BlockKind::kResBlock;
    if (name == "spatial") return BlockKind::kSpatial;
    if (name == "channel") return BlockKind::kChannel;
    if (name == "combined") return BlockKind::kCombined;
    throw std::invalid_argument("unknown block kind '" + name +
                                "' (expected resblock, spatial, channel or combined)");
}

namespace {

void check_map(const Shape& s, const BlockConfig& c, const char* what) {
    if (s.size() != 4 || s[3] != c.width) {
        throw ShapeError(std::string(what) + " expects [B, H, W, " + std::to_string(c.width) +
                         "], got " + shape_str(s));
    }
}

}  // namespace

template <typename T>
ConvPreamble<T>::ConvPreamble(std::size_t width, InitRng& rng) {
    const std::size_t C = width;
    norm_gamma = this->add_param("norm.gamma", Tensor<T>({C}, T(1)), false);
    norm_beta = this->add_param("norm.beta", Tensor<T>({C}), false);
    pw_w = this->add_param("pw.weight", fan_in_uniform<T>({C, C}, C, rng), true);
    pw_b = this->add_param("pw.bias", Tensor<T>({C}), false);
    dw_w = this->add_param("dw.weight", fan_in_uniform<T>({3, 3, C}, 9, rng), true);
    dw_b = this->add_param("dw.bias", Tensor<T>({C}), false);
}

template <typename T>
Tensor<T> ConvPreamble<T>::forward(const Tensor<T>& x) const {
    const Tensor<T> n = ops::layer_norm(x, norm_gamma, norm_beta);
    const Tensor<T> p = ops::conv2d(n, pw_w, pw_b, ConvKind::kPointwise1x1);
    return ops::conv2d(p, dw_w, dw_b, ConvKind::kDepthwise3x3);
}

template <typename T>
SpatialSsmBlock<T>::SpatialSsmBlock(const BlockConfig& config, InitRng& rng) : config_(config) {
    pre_ = std::make_unique<ConvPreamble<T>>(config.width, rng);
    ssm_ = std::make_unique<ssm::SelectiveSsm<T>>(
        ssm::SelectiveSsmConfig{config.width, config.state_size, config.expansion, config.conv_width}, rng);
    this->add_child("pre", pre_.get());
    this->add_child("ssm", ssm_.get());
}

template <typename T>
BlockTrace<T> SpatialSsmBlock<T>::trace(const Tensor<T>& x) const {
    check_map(x.shape(), config_, "spatial SSM block");
    const std::size_t B = x.size(0), H = x.size(1), W = x.size(2), C = x.size(3);
    BlockTrace<T> t;
    t.tokens = ops::reshape(pre_->forward(x), Shape{B, H * W, C});
    t.scanned = ssm_->forward(t.tokens);
    t.branch = ops::reshape(t.scanned, Shape{B, H, W, C});
    t.output = ops::add(x, t.branch);
    return t;
}

template <typename T>
ChannelSsmBlock<T>::ChannelSsmBlock(const BlockConfig& config, InitRng& rng) : config_(config) {
    const std::size_t C = config.width;
    const std::size_t L = config.height * config.cols;
    if (L == 0) throw std::invalid_argument("channel SSM block needs a non-empty resolution");
    pre_ = std::make_unique<ConvPreamble<T>>(C, rng);
    ssm_ = std::make_unique<ssm::SelectiveSsm<T>>(
        ssm::SelectiveSsmConfig{L, config.state_size, config.expansion, config.conv_width}, rng);
    this->add_child("pre", pre_.get());
    this->add_child("ssm", ssm_.get());
    smooth1_w = this->add_param("smooth1.weight", fan_in_uniform<T>({3, 3, C}, 9, rng), true);
    smooth1_b = this->add_param("smooth1.bias", Tensor<T>({C}), false);
    smooth2_w = this->add_param("smooth2.weight", fan_in_uniform<T>({3, 3, C}, 9, rng), true);
    smooth2_b = this->add_param("smooth2.bias", Tensor<T>({C}), false);
}

template <typename T>
BlockTrace<T> ChannelSsmBlock<T>::trace(const Tensor<T>& x) const {
    check_map(x.shape(), config_, "channel SSM block");
    const std::size_t B = x.size(0), H = x.size(1), W = x.size(2), C = x.size(3);
    if (H != config_.height || W != config_.cols) {
        throw ResolutionError("channel SSM block was built for " + std::to_string(config_.height) +
                              "x" + std::to_string(config_.cols) + " feature maps but got " +
                              std::to_string(H) + "x" + std::to_string(W) +
                              "; run the network on patches of its configured size (infer tiles larger images)");
    }
    BlockTrace<T> t;
    const Tensor<T> flat = ops::reshape(pre_->forward(x), Shape{B, H * W, C});
    t.tokens = ops::permute(flat, {0, 2, 1});
    t.scanned = ssm_->forward(t.tokens);
    const Tensor<T> back = ops::reshape(ops::permute(t.scanned, {0, 2, 1}), Shape{B, H, W, C});
    const Tensor<T> s1 = ops::conv2d(back, smooth1_w, smooth1_b, ConvKind::kDepthwise3x3);
    t.branch = ops::conv2d(ops::leaky_relu(s1), smooth2_w, smooth2_b, ConvKind::kDepthwise3x3);
    t.output = ops::add(x, t.branch);
    return t;
}

template <typename T>
ResBlock<T>::ResBlock(const BlockConfig& config, InitRng& rng) {
    const std::size_t C = config.width;
    conv1_w = this->add_param("conv1.weight", fan_in_uniform<T>({3, 3, C, C}, 9 * C, rng), true);
    conv1_b = this->add_param("conv1.bias", Tensor<T>({C}), false);
    conv2_w = this->add_param("conv2.weight", fan_in_uniform<T>({3, 3, C, C}, 9 * C, rng), true);
    conv2_b = this->add_param("conv2.bias", Tensor<T>({C}), false);
}

template <typename T>
Tensor<T> ResBlock<T>::forward(const Tensor<T>& x) const {
    const Tensor<T> h = ops::leaky_relu(ops::conv2d(x, conv1_w, conv1_b, ConvKind::kPlain3x3));
    return ops::add(x, ops::conv2d(h, conv2_w, conv2_b, ConvKind::kPlain3x3));
}

template <typename T>
CuMambaBlock<T>::CuMambaBlock(const BlockConfig& config, BlockKind kind, InitRng& rng) : kind_(kind) {
    if (kind == BlockKind::kResBlock) {
        res_ = std::make_unique<ResBlock<T>>(config, rng);
        this->add_child("res", res_.get());
        return;
    }
    if (kind == BlockKind::kSpatial || kind == BlockKind::kCombined) {
        spatial_ = std::make_unique<SpatialSsmBlock<T>>(config, rng);
        this->add_child("spatial", spatial_.get());
    }
    if (kind == BlockKind::kChannel || kind == BlockKind::kCombined) {
        channel_ = std::make_unique<ChannelSsmBlock<T>>(config, rng);
        this->add_child("channel", channel_.get());
    }
}

template <typename T>
Tensor<T> CuMambaBlock<T>::forward(const Tensor<T>& x) const {
    if (res_) return res_->forward(x);
    Tensor<T> y = x;
    if (spatial_) y = spatial_->forward(y);
    if (channel_) y = channel_->forward(y);
    return y;
}

namespace {

std::size_t preamble_params(std::size_t C) { return 2 * C + (C * C + C) + (9 * C + C); }

std::size_t ssm_flops(std::size_t L, std::size_t F, const BlockConfig& c) {
    const std::size_t D = F * c.expansion;
    const std::size_t N = c.state_size;
    const std::size_t macs = 2 * L * F * D          // input projections
                             + L * c.conv_width * D  // causal conv
                             + 2 * L * D * N         // B and C projections
                             + L * D * D             // delta projection
                             + 3 * L * D * N         // discretize, recurrence, readout
                             + L * D                 // gate
                             + L * D * F;            // output projection
    return 2 * macs;
}

}  // namespace

std::size_t block_param_count(const BlockConfig& c, BlockKind kind) {
    const std::size_t C = c.width;
    const std::size_t L = c.height * c.cols;
    const auto ssm_cfg = [&](std::size_t F) {
        return ssm::SelectiveSsmConfig{F, c.state_size, c.expansion, c.conv_width};
    };
    const std::size_t spatial = preamble_params(C) + ssm::selective_ssm_param_count(ssm_cfg(C));
    const std::size_t channel =
        preamble_params(C) + ssm::selective_ssm_param_count(ssm_cfg(L)) + 2 * (9 * C + C);
    switch (kind) {
        case BlockKind::kResBlock: return 2 * (9 * C * C + C);
        case BlockKind::kSpatial: return spatial;
        case BlockKind::kChannel: return channel;
        case BlockKind::kCombined: return spatial + channel;
    }
    return 0;
}

std::size_t block_flops(const BlockConfig& c, BlockKind kind) {
    const std::size_t C = c.width;
    const std::size_t L = c.height * c.cols;
    const std::size_t preamble = 2 * (L * C * C + 9 * L * C) + 8 * L * C;
    const std::size_t spatial = preamble + ssm_flops(L, C, c) + L * C;
    const std::size_t channel = preamble + ssm_flops(C, L, c) + 2 * (2 * 9 * L * C) + 2 * L * C;
    switch (kind) {
        case BlockKind::kResBlock: return 2 * (2 * 9 * L * C * C) + 2 * L * C;
        case BlockKind::kSpatial: return spatial;
        case BlockKind::kChannel: return channel;
        case BlockKind::kCombined: return spatial + channel;
    }
    return 0;
}

template <typename T>
void zero_non_gain_parameters(Module<T>& module) {
    for (auto& p : module.parameters()) {
        const bool gain = p.name.size() >= 5 && p.name.compare(p.name.size() - 5, 5, "gamma") == 0;
        if (gain) continue;
        for (T& v : p.tensor.mutable_data()) v = T(0);
    }
}

#define CUMAMBA_INSTANTIATE_BLOCKS(T)  \
    template class ConvPreamble<T>;    \
    template class SpatialSsmBlock<T>; \
    template class ChannelSsmBlock<T>; \
    template class ResBlock<T>;        \
    template class CuMambaBlock<T>;    \
    template void zero_non_gain_parameters<T>(Module<T>&);

CUMAMBA_INSTANTIATE_BLOCKS(float)
CUMAMBA_INSTANTIATE_BLOCKS(double)

}  // namespace cumamba
