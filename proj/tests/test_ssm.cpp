#include <cmath>
#include <random>

#include "cumamba/gradcheck.hpp"
#include "cumamba/ops.hpp"
#include "cumamba/ssm.hpp"
#include "doctest.h"

using cumamba::InitRng;
using cumamba::Shape;
using cumamba::Tensor;
namespace ops = cumamba::ops;
namespace ssm = cumamba::ssm;

namespace {

template <typename T>
Tensor<T> uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor<T> t(std::move(shape));
    for (T& v : t.mutable_data()) v = static_cast<T>(dist(rng));
    return t;
}

template <typename T>
struct Instance {
    Tensor<T> abar, bbar, x, C_t, D;
};

template <typename T>
Instance<T> random_instance(std::size_t L, std::size_t C, std::size_t N, std::mt19937_64& rng) {
    const auto delta = uniform<T>({L, C}, rng, 0.01, 0.5);
    const auto A = uniform<T>({C, N}, rng, -3.0, -0.1);
    const auto B = uniform<T>({L, N}, rng, -1, 1);
    const auto d = ssm::discretize(delta, A, B);
    return {d.abar, d.bbar, uniform<T>({L, C}, rng, -1, 1), uniform<T>({L, N}, rng, -1, 1),
            uniform<T>({C}, rng, -1, 1)};
}

Tensor<double> probe(const Tensor<double>& y) {
    std::mt19937_64 rng(5);
    return ops::sum(ops::mul(y, uniform<double>(y.shape(), rng, -1, 1)));
}

}  // namespace

TEST_CASE("discretize anchors") {
    const Tensor<double> A({1, 1}, -1.0);
    const Tensor<double> B({1, 1}, 2.0);
    const auto tiny = ssm::discretize(Tensor<double>({1, 1}, 1e-12), A, B);
    CHECK(tiny.abar[0] == doctest::Approx(1.0));
    CHECK(tiny.bbar[0] == doctest::Approx(0.0));
    const auto half = ssm::discretize(Tensor<double>({1, 1}, std::log(2.0)), A, B);
    CHECK(half.abar[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK_THROWS_AS(ssm::discretize(Tensor<double>({1, 1}, 0.0), A, B), std::domain_error);
    CHECK_THROWS_AS(ssm::discretize(Tensor<double>({1, 1}, -0.1), A, B), std::domain_error);
}

TEST_CASE("discretized decay stays strictly inside (0, 1)") {
    std::mt19937_64 rng(31);
    for (int rep = 0; rep < 20; ++rep) {
        const auto delta = uniform<float>({16, 8}, rng, 1e-4, 2.0);
        const auto A = uniform<float>({8, 16}, rng, -8.0, -1e-3);
        const auto d = ssm::discretize(delta, A, uniform<float>({16, 16}, rng, -1, 1));
        for (float v : d.abar.data()) {
            CHECK(v > 0.0f);
            CHECK(v < 1.0f);
        }
    }
}

TEST_CASE("zero decay makes the scan memoryless") {
    std::mt19937_64 rng(32);
    auto inst = random_instance<double>(5, 3, 2, rng);
    for (double& v : inst.abar.mutable_data()) v = 0.0;
    const auto y = ssm::scan_sequential(inst.abar, inst.bbar, inst.x, inst.C_t, inst.D);
    for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t c = 0; c < 3; ++c) {
            double acc = inst.D[c] * inst.x.at({t, c});
            for (std::size_t n = 0; n < 2; ++n)
                acc += inst.C_t.at({t, n}) * inst.bbar.at({t, c, n}) * inst.x.at({t, c});
            CHECK(y.at({t, c}) == doctest::Approx(acc).epsilon(1e-14));
        }
}

TEST_CASE("single step scan") {
    const Tensor<double> abar({1, 1, 1}, 0.3);
    const Tensor<double> bbar({1, 1, 1}, 0.7);
    const Tensor<double> x({1, 1}, 2.0);
    const Tensor<double> Ct({1, 1}, 1.5);
    const Tensor<double> D({1}, 0.25);
    const auto y = ssm::scan_sequential(abar, bbar, x, Ct, D);
    CHECK(y[0] == doctest::Approx(1.5 * 0.7 * 2.0 + 0.25 * 2.0));
    const auto yp = ssm::scan_parallel(abar, bbar, x, Ct, D, 4);
    CHECK(yp[0] == y[0]);
}

TEST_CASE("hand-unrolled three-step recurrence") {
    const Tensor<double> abar({3, 1, 1}, {0.5, 0.25, 0.8});
    const Tensor<double> bbar({3, 1, 1}, {1.0, 2.0, 0.5});
    const Tensor<double> x({3, 1}, {1.0, -1.0, 4.0});
    const Tensor<double> Ct({3, 1}, {2.0, 1.0, 0.5});
    const Tensor<double> D({1}, 0.1);
    const double h1 = 1.0;
    const double h2 = 0.25 * h1 + 2.0 * -1.0;
    const double h3 = 0.8 * h2 + 0.5 * 4.0;
    const double expect[] = {2.0 * h1 + 0.1, 1.0 * h2 - 0.1, 0.5 * h3 + 0.4};
    const auto y = ssm::scan_sequential(abar, bbar, x, Ct, D);
    for (int i = 0; i < 3; ++i) CHECK(y[i] == expect[i]);
}

TEST_CASE("scan element composition is associative") {
    std::mt19937_64 rng(33);
    std::uniform_real_distribution<double> u(-2, 2);
    for (int rep = 0; rep < 100; ++rep) {
        double e[3][2];
        for (auto& el : e) {
            el[0] = u(rng);
            el[1] = u(rng);
        }
        double l[2], r[2], t[2];
        cumamba::simd::compose(&e[0][0], &e[0][1], &e[1][0], &e[1][1], &t[0], &t[1], 1);
        cumamba::simd::compose(&t[0], &t[1], &e[2][0], &e[2][1], &l[0], &l[1], 1);
        cumamba::simd::compose(&e[1][0], &e[1][1], &e[2][0], &e[2][1], &t[0], &t[1], 1);
        cumamba::simd::compose(&e[0][0], &e[0][1], &t[0], &t[1], &r[0], &r[1], 1);
        CHECK(std::abs(l[0] - r[0]) < 1e-12);
        CHECK(std::abs(l[1] - r[1]) < 1e-12);
    }
}

TEST_CASE("exclusive tree prefix matches a running fold") {
    std::mt19937_64 rng(34);
    for (std::size_t n : {1u, 2u, 3u, 5u, 8u, 13u}) {
        const std::size_t lanes = 3;
        auto a = uniform<double>({n, lanes}, rng, 0, 1);
        auto b = uniform<double>({n, lanes}, rng, -1, 1);
        std::vector<double> ea(a.data().begin(), a.data().end());
        std::vector<double> eb(b.data().begin(), b.data().end());
        ssm::blelloch_exclusive(ea.data(), eb.data(), n, lanes);
        for (std::size_t l = 0; l < lanes; ++l) {
            double pa = 1.0;
            double pb = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                CHECK(ea[k * lanes + l] == doctest::Approx(pa).epsilon(1e-12));
                CHECK(eb[k * lanes + l] == doctest::Approx(pb).epsilon(1e-12));
                pb = a[k * lanes + l] * pb + b[k * lanes + l];
                pa *= a[k * lanes + l];
            }
        }
    }
}

TEST_CASE("parallel scan equals sequential scan") {
    std::mt19937_64 rng(35);
    for (int rep = 0; rep < 20; ++rep) {
        std::uniform_int_distribution<std::size_t> Ld(1, 700), Cd(1, 12), Nd(1, 16), chunkd(1, 100);
        const std::size_t L = Ld(rng), C = Cd(rng), N = Nd(rng), chunk = chunkd(rng);
        const auto fi = random_instance<float>(L, C, N, rng);
        const auto yf0 = ssm::scan_sequential(fi.abar, fi.bbar, fi.x, fi.C_t, fi.D);
        const auto yf1 = ssm::scan_parallel(fi.abar, fi.bbar, fi.x, fi.C_t, fi.D, chunk);
        for (std::size_t i = 0; i < yf0.numel(); ++i) CHECK(std::abs(yf0[i] - yf1[i]) <= 1e-5f);
        const auto di = random_instance<double>(L, C, N, rng);
        const auto yd0 = ssm::scan_sequential(di.abar, di.bbar, di.x, di.C_t, di.D);
        const auto yd1 = ssm::scan_parallel(di.abar, di.bbar, di.x, di.C_t, di.D, chunk);
        for (std::size_t i = 0; i < yd0.numel(); ++i) CHECK(std::abs(yd0[i] - yd1[i]) <= 1e-10);
    }
}

TEST_CASE("scan rejects bad chunk and mismatched lengths") {
    std::mt19937_64 rng(36);
    const auto i = random_instance<double>(4, 2, 3, rng);
    CHECK_THROWS_AS(ssm::scan_parallel(i.abar, i.bbar, i.x, i.C_t, i.D, 0), std::invalid_argument);
    CHECK_THROWS_AS(ssm::scan_sequential(i.abar, i.bbar, Tensor<double>({3, 2}), i.C_t, i.D),
                    cumamba::ShapeError);
}

TEST_CASE("scan is causal") {
    std::mt19937_64 rng(37);
    const auto i = random_instance<double>(50, 4, 8, rng);
    const auto y0 = ssm::scan_parallel(i.abar, i.bbar, i.x, i.C_t, i.D, 8);
    for (std::size_t t : {0u, 17u, 49u}) {
        auto xp = i.x.clone();
        xp.mutable_data()[t * 4 + 2] += 0.5;
        const auto y1 = ssm::scan_parallel(i.abar, i.bbar, xp, i.C_t, i.D, 8);
        for (std::size_t s = 0; s < 50; ++s)
            for (std::size_t c = 0; c < 4; ++c) {
                if (s < t) CHECK(y1.at({s, c}) == y0.at({s, c}));
            }
        CHECK(y1.at({t, 2}) != y0.at({t, 2}));
    }
}

TEST_CASE("hidden state stays within the geometric bound") {
    std::mt19937_64 rng(38);
    for (int rep = 0; rep < 10; ++rep) {
        const std::size_t L = 300, C = 3, N = 4;
        const auto i = random_instance<double>(L, C, N, rng);
        double max_a = 0;
        double max_in = 0;
        for (std::size_t t = 0; t < L; ++t)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t n = 0; n < N; ++n) {
                    max_a = std::max(max_a, i.abar.at({t, c, n}));
                    max_in = std::max(max_in, std::abs(i.bbar.at({t, c, n}) * i.x.at({t, c})));
                }
        const double bound = max_in / (1 - max_a);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t n = 0; n < N; ++n) {
                double h = 0;
                for (std::size_t t = 0; t < L; ++t) {
                    h = i.abar.at({t, c, n}) * h + i.bbar.at({t, c, n}) * i.x.at({t, c});
                    CHECK(std::abs(h) <= bound + 1e-12);
                }
            }
    }
}

TEST_CASE("select_params anchors") {
    InitRng init(1);
    ssm::SelectiveSsm<double> block({4, 3, 2, 4}, init);
    auto p = block.ssm_params();
    ssm::SsmParams<double> zero = p;
    zero.dt_bias = Tensor<double>(p.dt_bias.shape(), 0.0);
    const auto sel = ssm::select_params(Tensor<double>({5, 8}, 0.0), zero);
    for (double v : sel.delta.data()) CHECK(v == doctest::Approx(std::log(2.0)));
    zero.dt_bias = Tensor<double>(p.dt_bias.shape(), -700.0);
    const auto tiny = ssm::select_params(Tensor<double>({5, 8}, 0.0), zero);
    for (double v : tiny.delta.data()) {
        CHECK(v > 0.0);
        CHECK(v < 1e-300);
    }
    std::mt19937_64 rng(39);
    const auto rnd = ssm::select_params(uniform<double>({20, 8}, rng, -5, 5), p);
    for (double v : rnd.delta.data()) CHECK(v > 0.0);
    CHECK_THROWS_AS(ssm::select_params(Tensor<double>({5, 7}), p), cumamba::ShapeError);
}

TEST_CASE("selective scan op equals the reference scan") {
    std::mt19937_64 rng(40);
    const std::size_t B = 2, L = 33, C = 5, N = 4;
    const auto u = uniform<double>({B, L, C}, rng, -1, 1);
    const auto delta = uniform<double>({B, L, C}, rng, 0.01, 0.6);
    const auto A = uniform<double>({C, N}, rng, -2, -0.2);
    const auto Bt = uniform<double>({B, L, N}, rng, -1, 1);
    const auto Ct = uniform<double>({B, L, N}, rng, -1, 1);
    const auto D = uniform<double>({C}, rng, -1, 1);
    for (bool parallel : {false, true}) {
        const auto y = ssm::selective_scan(u, delta, A, Bt, Ct, D, {parallel, 4});
        for (std::size_t b = 0; b < B; ++b) {
            Tensor<double> db({L, C}), ub({L, C}), bb({L, N}), cb({L, N});
            std::copy_n(delta.data().begin() + b * L * C, L * C, db.mutable_data().begin());
            std::copy_n(u.data().begin() + b * L * C, L * C, ub.mutable_data().begin());
            std::copy_n(Bt.data().begin() + b * L * N, L * N, bb.mutable_data().begin());
            std::copy_n(Ct.data().begin() + b * L * N, L * N, cb.mutable_data().begin());
            const auto d = ssm::discretize(db, A, bb);
            const auto ref = ssm::scan_sequential(d.abar, d.bbar, ub, cb, D);
            for (std::size_t i = 0; i < L * C; ++i) CHECK(std::abs(y[b * L * C + i] - ref[i]) < 1e-12);
        }
    }
}

TEST_CASE("selective scan gradient matches finite differences") {
    std::mt19937_64 rng(41);
    const std::size_t B = 2, L = 9, C = 3, N = 4;
    auto u = uniform<double>({B, L, C}, rng, -1, 1);
    auto delta = uniform<double>({B, L, C}, rng, 0.05, 0.8);
    auto A = uniform<double>({C, N}, rng, -2, -0.2);
    auto Bt = uniform<double>({B, L, N}, rng, -1, 1);
    auto Ct = uniform<double>({B, L, N}, rng, -1, 1);
    auto D = uniform<double>({C}, rng, -1, 1);
    for (bool parallel : {false, true}) {
        const auto r = cumamba::gradcheck(
            "selective_scan",
            [&] { return probe(ssm::selective_scan(u, delta, A, Bt, Ct, D, {parallel, 2})); },
            {{"u", u}, {"delta", delta}, {"A", A}, {"B", Bt}, {"C", Ct}, {"D", D}});
        INFO(r.worst << " " << r.max_rel_error);
        CHECK(r.passed);
    }
}

TEST_CASE("selective SSM block shapes") {
    InitRng init(2);
    for (std::size_t F : {4u, 32u}) {
        ssm::SelectiveSsm<float> block({F, 16, 2, 4}, init);
        for (std::size_t L : {1u, 7u, 64u}) {
            const Tensor<float> x({2, L, F}, 0.3f);
            CHECK(block.forward(x).shape() == Shape{2, L, F});
        }
    }
}

TEST_CASE("zero gate branch leaves only the output bias") {
    InitRng init(3);
    ssm::SelectiveSsm<double> block({4, 8, 2, 4}, init);
    for (double& v : block.in_z_w.mutable_data()) v = 0;
    for (double& v : block.in_z_b.mutable_data()) v = 0;
    for (std::size_t i = 0; i < 4; ++i) block.out_b.mutable_data()[i] = 0.1 * double(i + 1);
    std::mt19937_64 rng(42);
    const auto y = block.forward(uniform<double>({2, 6, 4}, rng, -1, 1));
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(0.1 * double(i % 4 + 1)));
}

TEST_CASE("selective SSM block parameter count") {
    InitRng init(4);
    const ssm::SelectiveSsmConfig cfg{6, 5, 2, 4};
    ssm::SelectiveSsm<float> block(cfg, init);
    CHECK(block.parameter_count() == ssm::selective_ssm_param_count(cfg));
}

TEST_CASE("selective SSM block gradient matches finite differences") {
    InitRng init(5);
    ssm::SelectiveSsm<double> block({3, 4, 2, 4}, init);
    std::mt19937_64 rng(43);
    auto x = uniform<double>({2, 6, 3}, rng, -1, 1);
    std::vector<std::pair<std::string, Tensor<double>>> inputs{{"x", x}};
    for (const auto& p : block.parameters()) inputs.emplace_back(p.name, p.tensor);
    const auto r = cumamba::gradcheck("selective_ssm_block", [&] { return probe(block.forward(x)); }, inputs);
    INFO(r.worst << " " << r.max_rel_error);
    CHECK(r.passed);
}

TEST_CASE("selective SSM block is causal along the sequence") {
    InitRng init(6);
    ssm::SelectiveSsm<double> block({4, 8, 2, 4}, init);
    std::mt19937_64 rng(44);
    const auto x = uniform<double>({1, 20, 4}, rng, -1, 1);
    const auto y0 = block.forward(x);
    for (std::size_t t : {3u, 11u, 19u}) {
        auto xp = x.clone();
        xp.mutable_data()[t * 4 + 1] += 0.3;
        const auto y1 = block.forward(xp);
        for (std::size_t s = 0; s < t; ++s)
            for (std::size_t f = 0; f < 4; ++f) CHECK(y1.at({0, s, f}) == y0.at({0, s, f}));
    }
}
