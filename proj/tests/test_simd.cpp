#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "cumamba/simd/dispatch.hpp"
#include "cumamba/simd/kernels.hpp"
#include "doctest.h"

namespace simd = cumamba::simd;
using simd::Isa;
using simd::RecurrenceView;

namespace {

template <typename T>
std::vector<T> random_vec(std::size_t n, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<T> v(n);
    for (T& x : v) x = static_cast<T>(dist(rng));
    return v;
}

std::vector<Isa> vector_isas() {
    std::vector<Isa> out;
    for (Isa isa : {Isa::kAvx2, Isa::kNeon})
        if (simd::isa_available(isa)) out.push_back(isa);
    return out;
}

template <typename T>
void check_recurrence_equivalence(double tol) {
    std::mt19937_64 rng(21);
    for (std::size_t lanes : {1u, 7u, 8u, 19u, 64u}) {
        for (std::ptrdiff_t dir : {1, -1}) {
            const std::size_t steps = 37;
            const auto a = random_vec<T>(steps * lanes, rng, 0.0, 1.0);
            const auto b = random_vec<T>(steps * lanes, rng, -1.0, 1.0);
            const std::size_t start = dir > 0 ? 0 : (steps - 1) * lanes;
            auto run = [&](Isa isa, std::vector<T>& h, std::vector<T>& state, std::vector<T>& pa,
                           std::vector<T>& pb) {
                simd::ScopedIsa scope(isa);
                h.assign(steps * lanes, T(0));
                state.assign(lanes, T(0.5));
                pa.assign(lanes, T(0));
                pb.assign(lanes, T(0));
                RecurrenceView<T> v{a.data() + start, b.data() + start, h.data() + start,
                                    dir * static_cast<std::ptrdiff_t>(lanes), steps, lanes};
                simd::recurrence(v, state.data());
                v.h = nullptr;
                simd::aggregate(v, pa.data(), pb.data());
            };
            std::vector<T> h0, s0, a0, b0;
            run(Isa::kScalar, h0, s0, a0, b0);
            for (Isa isa : vector_isas()) {
                std::vector<T> h1, s1, a1, b1;
                run(isa, h1, s1, a1, b1);
                for (std::size_t i = 0; i < h0.size(); ++i) CHECK(std::abs(h0[i] - h1[i]) <= tol);
                for (std::size_t i = 0; i < lanes; ++i) {
                    CHECK(std::abs(s0[i] - s1[i]) <= tol);
                    CHECK(std::abs(a0[i] - a1[i]) <= tol);
                    CHECK(std::abs(b0[i] - b1[i]) <= tol);
                }
            }
        }
    }
}

template <typename T>
void check_compose_equivalence() {
    std::mt19937_64 rng(22);
    for (std::size_t lanes : {1u, 5u, 8u, 33u}) {
        const auto fa = random_vec<T>(lanes, rng, 0, 1);
        const auto fb = random_vec<T>(lanes, rng, -1, 1);
        const auto sa = random_vec<T>(lanes, rng, 0, 1);
        const auto sb = random_vec<T>(lanes, rng, -1, 1);
        std::vector<T> oa0(lanes), ob0(lanes);
        simd::scalar::compose(fa.data(), fb.data(), sa.data(), sb.data(), oa0.data(), ob0.data(), lanes);
        for (Isa isa : vector_isas()) {
            simd::ScopedIsa scope(isa);
            std::vector<T> oa(lanes), ob(lanes);
            simd::compose(fa.data(), fb.data(), sa.data(), sb.data(), oa.data(), ob.data(), lanes);
            for (std::size_t i = 0; i < lanes; ++i) {
                CHECK(oa[i] == doctest::Approx(oa0[i]).epsilon(1e-6));
                CHECK(ob[i] == doctest::Approx(ob0[i]).epsilon(1e-6));
            }
        }
    }
}

template <typename T>
void check_gemm_equivalence(double tol) {
    std::mt19937_64 rng(23);
    const std::size_t shapes[][3] = {{1, 1, 1}, {6, 16, 7}, {13, 35, 300}, {50, 17, 9}, {4, 4, 513}};
    for (const auto& s : shapes) {
        const std::size_t m = s[0], n = s[1], k = s[2];
        for (int ta = 0; ta < 2; ++ta)
            for (int tb = 0; tb < 2; ++tb) {
                const auto a = random_vec<T>(m * k, rng, -1, 1);
                const auto b = random_vec<T>(k * n, rng, -1, 1);
                const auto c0 = random_vec<T>(m * n, rng, -1, 1);
                // Direct triple loop oracle in double.
                std::vector<double> ref(m * n);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        double acc = c0[i * n + j];
                        for (std::size_t p = 0; p < k; ++p) {
                            const double av = ta ? a[p * m + i] : a[i * k + p];
                            const double bv = tb ? b[j * k + p] : b[p * n + j];
                            acc += av * bv;
                        }
                        ref[i * n + j] = acc;
                    }
                for (Isa isa : {Isa::kScalar, Isa::kAvx2, Isa::kNeon}) {
                    if (!simd::isa_available(isa)) continue;
                    simd::ScopedIsa scope(isa);
                    auto c = c0;
                    simd::gemm<T>(ta, tb, m, n, k, a.data(), ta ? m : k, b.data(), tb ? k : n, c.data(), n, true);
                    for (std::size_t i = 0; i < m * n; ++i)
                        CHECK(std::abs(c[i] - ref[i]) <= tol * (1.0 + std::abs(ref[i])));
                }
            }
    }
}

}  // namespace

TEST_CASE("scalar variant is always available") {
    CHECK(simd::isa_available(Isa::kScalar));
    CHECK(simd::isa_available(simd::detected_isa()));
    simd::ScopedIsa scope(Isa::kScalar);
    CHECK(simd::active_isa() == Isa::kScalar);
}

TEST_CASE("unavailable variant is rejected") {
    for (Isa isa : {Isa::kAvx2, Isa::kNeon})
        if (!simd::isa_available(isa)) CHECK_THROWS_AS(simd::set_active_isa(isa), std::invalid_argument);
}

TEST_CASE("vector recurrence and aggregate match scalar") {
    check_recurrence_equivalence<float>(1e-5);
    check_recurrence_equivalence<double>(1e-12);
}

TEST_CASE("vector compose matches scalar") {
    check_compose_equivalence<float>();
    check_compose_equivalence<double>();
}

TEST_CASE("vector exp matches std::exp") {
    std::mt19937_64 rng(24);
    auto x = random_vec<float>(1003, rng, -80.0, 80.0);
    x.push_back(0.0f);
    x.push_back(-100.0f);
    for (Isa isa : vector_isas()) {
        simd::ScopedIsa scope(isa);
        std::vector<float> y(x.size());
        simd::exp(x.data(), y.data(), x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double ref = std::exp(static_cast<double>(x[i]));
            CHECK(std::abs(y[i] - ref) <= 4e-7 * ref + 1e-37);
        }
    }
}

TEST_CASE("gemm variants match a direct product") {
    check_gemm_equivalence<float>(1e-5);
    check_gemm_equivalence<double>(1e-12);
}

TEST_CASE("vector adamw matches scalar") {
    std::mt19937_64 rng(25);
    for (std::size_t n : {1u, 7u, 8u, 29u, 1000u}) {
        const auto g = random_vec<float>(n, rng, -2.0, 2.0);
        const auto w0 = random_vec<float>(n, rng, -1.0, 1.0);
        const auto m0 = random_vec<float>(n, rng, -0.1, 0.1);
        const auto v0 = random_vec<float>(n, rng, 0.0, 0.1);
        simd::AdamCoeffs k;
        k.inv_bias1 = 1.0f / 0.19f;
        k.inv_bias2 = 1.0f / 0.001999f;
        k.lr = 1e-3f;
        k.decay = 1.0f - 1e-7f;
        auto run = [&](Isa isa, std::vector<float>& w, std::vector<float>& m, std::vector<float>& v) {
            simd::ScopedIsa scope(isa);
            w = w0;
            m = m0;
            v = v0;
            for (int step = 0; step < 3; ++step) simd::adamw(w.data(), m.data(), v.data(), g.data(), n, k);
        };
        std::vector<float> ws, ms, vs;
        run(Isa::kScalar, ws, ms, vs);
        for (Isa isa : vector_isas()) {
            std::vector<float> w, m, v;
            run(isa, w, m, v);
            for (std::size_t i = 0; i < n; ++i) {
                CHECK(w[i] == doctest::Approx(ws[i]).epsilon(1e-6));
                CHECK(m[i] == doctest::Approx(ms[i]).epsilon(1e-6));
                CHECK(v[i] == doctest::Approx(vs[i]).epsilon(1e-6));
            }
        }
    }
}
