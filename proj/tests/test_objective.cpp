#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <random>

#include "cumamba/gradcheck.hpp"
#include "cumamba/objective.hpp"
#include "cumamba/ops.hpp"
#include "doctest.h"

using namespace cumamba;

namespace {

template <typename T>
Tensor<T> uniform(Shape shape, std::mt19937_64& rng, double lo = 0, double hi = 1) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor<T> t(std::move(shape));
    for (T& v : t.mutable_data()) v = static_cast<T>(dist(rng));
    return t;
}

// Textbook O(n^4) DFT of one plane.
std::complex<double> naive_dft(const Tensor<double>& x, std::size_t u, std::size_t v) {
    const std::size_t H = x.size(0), W = x.size(1);
    std::complex<double> acc = 0;
    for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
            const double ang = -2.0 * std::numbers::pi *
                               (static_cast<double>(u * i) / H + static_cast<double>(v * j) / W);
            acc += x[i * W + j] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
    return acc;
}

// Direct per-window SSIM with an explicit 2-D Gaussian.
double naive_ssim(const Tensor<double>& a, const Tensor<double>& b) {
    const std::size_t H = a.size(0), W = a.size(1), C = a.size(2), K = kSsimWindow;
    std::vector<double> w(K * K);
    double total_w = 0;
    for (std::size_t i = 0; i < K; ++i)
        for (std::size_t j = 0; j < K; ++j) {
            const double di = double(i) - double(K / 2), dj = double(j) - double(K / 2);
            w[i * K + j] = std::exp(-(di * di + dj * dj) / (2 * kSsimSigma * kSsimSigma));
            total_w += w[i * K + j];
        }
    for (double& v : w) v /= total_w;
    const double c1 = kSsimK1 * kSsimK1, c2 = kSsimK2 * kSsimK2;
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y + K <= H; ++y)
            for (std::size_t x = 0; x + K <= W; ++x) {
                double mx = 0, my = 0;
                for (std::size_t i = 0; i < K; ++i)
                    for (std::size_t j = 0; j < K; ++j) {
                        const std::size_t idx = ((y + i) * W + x + j) * C + c;
                        mx += w[i * K + j] * a[idx];
                        my += w[i * K + j] * b[idx];
                    }
                double vx = 0, vy = 0, cov = 0;
                for (std::size_t i = 0; i < K; ++i)
                    for (std::size_t j = 0; j < K; ++j) {
                        const std::size_t idx = ((y + i) * W + x + j) * C + c;
                        vx += w[i * K + j] * (a[idx] - mx) * (a[idx] - mx);
                        vy += w[i * K + j] * (b[idx] - my) * (b[idx] - my);
                        cov += w[i * K + j] * (a[idx] - mx) * (b[idx] - my);
                    }
                sum += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++n;
            }
    return sum / double(n);
}

}  // namespace

TEST_CASE("dft2 matches direct summation for power-of-two and odd sizes") {
    std::mt19937_64 rng(1);
    for (auto [H, W] : {std::pair{8u, 8u}, std::pair{4u, 16u}, std::pair{5u, 7u}, std::pair{6u, 8u}}) {
        const auto x = uniform<double>({H, W}, rng, -1, 1);
        const ComplexGrid g = dft2(x);
        for (std::size_t u = 0; u < H; ++u)
            for (std::size_t v = 0; v < W; ++v) {
                const auto ref = naive_dft(x, u, v);
                CHECK(g.at(u, v).real() == doctest::Approx(ref.real()).epsilon(1e-10));
                CHECK(g.at(u, v).imag() == doctest::Approx(ref.imag()).epsilon(1e-10));
            }
    }
}

TEST_CASE("dft2 round-trips, satisfies Parseval and Hermitian symmetry") {
    std::mt19937_64 rng(2);
    const std::size_t H = 16, W = 12;
    const auto x = uniform<double>({H, W}, rng, -1, 1);
    const ComplexGrid g = dft2(x);
    const auto back = idft2(g);
    double energy = 0, spectral = 0;
    for (std::size_t i = 0; i < H * W; ++i) {
        CHECK(back[i] == doctest::Approx(x[i]).epsilon(1e-12));
        energy += x[i] * x[i];
        spectral += g.real[i] * g.real[i] + g.imag[i] * g.imag[i];
    }
    CHECK(spectral / double(H * W) == doctest::Approx(energy).epsilon(1e-10));
    for (std::size_t u = 0; u < H; ++u)
        for (std::size_t v = 0; v < W; ++v) {
            const auto a = g.at(u, v);
            const auto b = g.at((H - u) % H, (W - v) % W);
            CHECK(a.real() == doctest::Approx(b.real()).epsilon(1e-10));
            CHECK(a.imag() == doctest::Approx(-b.imag()).epsilon(1e-10));
        }
}

TEST_CASE("charbonnier value and limits") {
    Tensor<double> p({2, 2}, std::vector<double>{0.0, 1.0, 0.5, 0.25});
    Tensor<double> t({2, 2}, std::vector<double>{0.0, 0.0, 0.5, 1.0});
    double ref = 0;
    for (double d : {0.0, 1.0, 0.0, -0.75}) ref += std::sqrt(d * d + 1e-3);
    CHECK(charbonnier(p, t).item() == doctest::Approx(ref / 4));
    CHECK(charbonnier(t, t).item() == doctest::Approx(std::sqrt(1e-3)));
    CHECK_THROWS_AS(charbonnier(p, t, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(charbonnier(p, Tensor<double>({4})), ShapeError);
}

TEST_CASE("fourier_l1 matches a per-plane spectral sum") {
    std::mt19937_64 rng(3);
    const auto p = uniform<double>({2, 8, 6, 3}, rng);
    const auto t = uniform<double>({2, 8, 6, 3}, rng);
    double ref = 0;
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t c = 0; c < 3; ++c) {
            Tensor<double> plane({8, 6});
            for (std::size_t i = 0; i < 48; ++i) plane.mutable_data()[i] = p[(b * 48 + i) * 3 + c] - t[(b * 48 + i) * 3 + c];
            const auto g = dft2(plane);
            for (std::size_t i = 0; i < 48; ++i) ref += std::abs(g.real[i]) + std::abs(g.imag[i]);
        }
    CHECK(fourier_l1(p, t).item() == doctest::Approx(ref / (2 * 3 * 48)).epsilon(1e-12));
    CHECK(fourier_l1(p, p).item() == 0.0);
    CHECK_THROWS_AS(fourier_l1(Tensor<double>({4, 4}), Tensor<double>({4, 4})), ShapeError);
}

TEST_CASE("loss gradients match finite differences") {
    std::mt19937_64 rng(4);
    auto p = uniform<double>({2, 8, 8, 3}, rng);
    auto t = uniform<double>({2, 8, 8, 3}, rng);
    for (double lambda : {0.0, 0.1, 1.0}) {
        LossConfig cfg;
        cfg.lambda = lambda;
        const auto r = gradcheck("restoration_loss", [&] { return restoration_loss(p, t, cfg); },
                                 {{"pred", p}, {"target", t}});
        INFO(r.worst << " " << r.max_rel_error);
        CHECK(r.passed);
    }
    auto po = uniform<double>({1, 5, 6, 2}, rng);
    auto to = uniform<double>({1, 5, 6, 2}, rng);
    const auto r = gradcheck("fourier_l1 odd size", [&] {
        return fourier_l1(ops::scale(po, 2.0), to);
    }, {{"pred", po}, {"target", to}});
    INFO(r.worst << " " << r.max_rel_error);
    CHECK(r.passed);
}

TEST_CASE("loss config validation") {
    LossConfig cfg;
    cfg.lambda = -1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = LossConfig{};
    cfg.epsilon = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("psnr known values and identical sentinel") {
    Tensor<double> a({10}, 0.5);
    Tensor<double> b({10}, 0.6);
    CHECK(psnr(a, b) == doctest::Approx(20.0));
    CHECK(std::isinf(psnr(a, a)));
    CHECK(psnr(a, a) > 0);
    Tensor<float> af({4}, 0.0f), bf({4}, 1.0f);
    CHECK(psnr(af, bf) == doctest::Approx(0.0));
}

TEST_CASE("ssim matches a direct windowed oracle") {
    std::mt19937_64 rng(5);
    const auto a = uniform<double>({16, 14, 2}, rng);
    auto b = a.clone();
    std::normal_distribution<double> noise(0, 0.1);
    for (double& v : b.mutable_data()) v += noise(rng);
    CHECK(ssim(a, b) == doctest::Approx(naive_ssim(a, b)).epsilon(1e-10));
    CHECK(ssim(a, a) == doctest::Approx(1.0));
    CHECK(ssim(a, b) < 1.0);
    const auto taps = ssim_taps();
    double s = 0;
    for (double t : taps) s += t;
    CHECK(s == doctest::Approx(1.0));
    CHECK_THROWS_AS(ssim(Tensor<double>({10, 10, 3}), Tensor<double>({10, 10, 3})), ShapeError);
}

TEST_CASE("ssim of a batch averages its images") {
    std::mt19937_64 rng(6);
    const auto a = uniform<double>({2, 12, 12, 1}, rng);
    const auto b = uniform<double>({2, 12, 12, 1}, rng);
    Tensor<double> a0({12, 12, 1}), a1({12, 12, 1}), b0({12, 12, 1}), b1({12, 12, 1});
    for (std::size_t i = 0; i < 144; ++i) {
        a0.mutable_data()[i] = a[i];
        a1.mutable_data()[i] = a[144 + i];
        b0.mutable_data()[i] = b[i];
        b1.mutable_data()[i] = b[144 + i];
    }
    CHECK(ssim(a, b) == doctest::Approx((ssim(a0, b0) + ssim(a1, b1)) / 2));
}
