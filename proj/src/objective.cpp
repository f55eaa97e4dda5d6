#include "cumamba/objective.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>

#include "cumamba/ops.hpp"

namespace cumamba {

void LossConfig::validate() const {
    if (!(epsilon > 0.0)) throw std::invalid_argument("loss epsilon must be positive");
    if (!(lambda >= 0.0)) throw std::invalid_argument("loss lambda must be non-negative");
}

void dft1(std::vector<std::complex<double>>& x, int sign) {
    const std::size_t n = x.size();
    if (n <= 1) return;
    const double s = static_cast<double>(sign);
    if ((n & (n - 1)) != 0) {
        std::vector<std::complex<double>> out(n);
        for (std::size_t k = 0; k < n; ++k) {
            std::complex<double> acc = 0;
            for (std::size_t j = 0; j < n; ++j) {
                const double ang = s * 2.0 * std::numbers::pi * static_cast<double>((k * j) % n) /
                                   static_cast<double>(n);
                acc += x[j] * std::complex<double>(std::cos(ang), std::sin(ang));
            }
            out[k] = acc;
        }
        x.swap(out);
        return;
    }
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(x[i], x[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = s * 2.0 * std::numbers::pi / static_cast<double>(len);
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t k = 0; k < len / 2; ++k) {
                const double a = ang * static_cast<double>(k);
                const std::complex<double> w(std::cos(a), std::sin(a));
                const std::complex<double> u = x[i + k];
                const std::complex<double> v = x[i + k + len / 2] * w;
                x[i + k] = u + v;
                x[i + k + len / 2] = u - v;
            }
        }
    }
}

namespace {

// Transforms a row-major H x W complex plane in place.
void dft2_inplace(std::vector<std::complex<double>>& plane, std::size_t H, std::size_t W, int sign) {
    std::vector<std::complex<double>> line(W);
    for (std::size_t i = 0; i < H; ++i) {
        std::copy_n(plane.begin() + static_cast<std::ptrdiff_t>(i * W), W, line.begin());
        dft1(line, sign);
        std::copy(line.begin(), line.end(), plane.begin() + static_cast<std::ptrdiff_t>(i * W));
    }
    line.resize(H);
    for (std::size_t j = 0; j < W; ++j) {
        for (std::size_t i = 0; i < H; ++i) line[i] = plane[i * W + j];
        dft1(line, sign);
        for (std::size_t i = 0; i < H; ++i) plane[i * W + j] = line[i];
    }
}

void require_same(const Shape& a, const Shape& b, const char* what) {
    if (a != b) {
        throw ShapeError(std::string(what) + " needs equal shapes, got " + shape_str(a) + " and " +
                         shape_str(b));
    }
}

struct ImageDims {
    std::size_t b, h, w, c;
};

ImageDims image_dims(const Shape& s, const char* what) {
    if (s.size() == 4) return {s[0], s[1], s[2], s[3]};
    if (s.size() == 3) return {1, s[0], s[1], s[2]};
    throw ShapeError(std::string(what) + " expects [B, H, W, C] or [H, W, C], got " + shape_str(s));
}

}  // namespace

template <typename T>
ComplexGrid dft2(const Tensor<T>& x) {
    if (x.dim() != 2) throw ShapeError("dft2 expects a plane [H, W], got " + shape_str(x.shape()));
    const std::size_t H = x.size(0);
    const std::size_t W = x.size(1);
    std::vector<std::complex<double>> plane(H * W);
    for (std::size_t i = 0; i < H * W; ++i) plane[i] = static_cast<double>(x[i]);
    dft2_inplace(plane, H, W, -1);
    ComplexGrid g{H, W, std::vector<double>(H * W), std::vector<double>(H * W)};
    for (std::size_t i = 0; i < H * W; ++i) {
        g.real[i] = plane[i].real();
        g.imag[i] = plane[i].imag();
    }
    return g;
}

Tensor<double> idft2(const ComplexGrid& grid) {
    const std::size_t H = grid.height;
    const std::size_t W = grid.width;
    std::vector<std::complex<double>> plane(H * W);
    for (std::size_t i = 0; i < H * W; ++i) plane[i] = {grid.real[i], grid.imag[i]};
    dft2_inplace(plane, H, W, +1);
    Tensor<double> out({H, W});
    const double scale = 1.0 / static_cast<double>(H * W);
    for (std::size_t i = 0; i < H * W; ++i) out.mutable_data()[i] = plane[i].real() * scale;
    return out;
}

template <typename T>
Tensor<T> charbonnier(const Tensor<T>& pred, const Tensor<T>& target, double epsilon) {
    require_same(pred.shape(), target.shape(), "charbonnier");
    if (!(epsilon > 0.0)) throw std::invalid_argument("charbonnier epsilon must be positive");
    const std::size_t n = pred.numel();
    if (n == 0) throw ShapeError("charbonnier of empty tensors");
    const auto p = pred.data();
    const auto t = target.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
        acc += std::sqrt(d * d + epsilon);
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
    if (!detail::needs_graph<T>({&pred, &target})) return out;
    auto pi = pred.impl();
    auto ti = target.impl();
    detail::attach<T>(out, "charbonnier", {pi, ti}, [pi, ti, n, epsilon](std::span<const T> g) {
        const double scale = static_cast<double>(g[0]) / static_cast<double>(n);
        T* gp = pi->requires_grad ? pi->grad_buffer().data() : nullptr;
        T* gt = ti->requires_grad ? ti->grad_buffer().data() : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = static_cast<double>(pi->data[i]) - static_cast<double>(ti->data[i]);
            const double v = scale * d / std::sqrt(d * d + epsilon);
            if (gp) gp[i] += static_cast<T>(v);
            if (gt) gt[i] -= static_cast<T>(v);
        }
    });
    return out;
}

template <typename T>
Tensor<T> fourier_l1(const Tensor<T>& pred, const Tensor<T>& target) {
    require_same(pred.shape(), target.shape(), "fourier_l1");
    const ImageDims d = image_dims(pred.shape(), "fourier_l1");
    const std::size_t plane = d.h * d.w;
    const std::size_t count = d.b * d.c * plane;
    if (count == 0) throw ShapeError("fourier_l1 of empty images");
    const auto p = pred.data();
    const auto t = target.data();
    // Spectrum of the difference, one plane per (batch, channel).
    auto spec = std::make_shared<std::vector<std::complex<double>>>(count);
    double acc = 0.0;
    std::vector<std::complex<double>> buf(plane);
    for (std::size_t b = 0; b < d.b; ++b)
        for (std::size_t c = 0; c < d.c; ++c) {
            for (std::size_t i = 0; i < plane; ++i) {
                const std::size_t src = (b * plane + i) * d.c + c;
                buf[i] = static_cast<double>(p[src]) - static_cast<double>(t[src]);
            }
            dft2_inplace(buf, d.h, d.w, -1);
            const std::size_t base = (b * d.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                (*spec)[base + i] = buf[i];
                acc += std::abs(buf[i].real()) + std::abs(buf[i].imag());
            }
        }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(count)));
    if (!detail::needs_graph<T>({&pred, &target})) return out;
    auto pi = pred.impl();
    auto ti = target.impl();
    detail::attach<T>(out, "fourier_l1", {pi, ti}, [pi, ti, spec, d, plane, count](std::span<const T> g) {
        const auto sgn = [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); };
        const double scale = static_cast<double>(g[0]) / static_cast<double>(count);
        T* gp = pi->requires_grad ? pi->grad_buffer().data() : nullptr;
        T* gt = ti->requires_grad ? ti->grad_buffer().data() : nullptr;
        std::vector<std::complex<double>> buf(plane);
        for (std::size_t b = 0; b < d.b; ++b)
            for (std::size_t c = 0; c < d.c; ++c) {
                const std::size_t base = (b * d.c + c) * plane;
                // d/dx of sum |Re F| + |Im F| is Re(DFT(sign(Re F) - i sign(Im F))).
                for (std::size_t i = 0; i < plane; ++i) {
                    const auto& f = (*spec)[base + i];
                    buf[i] = {sgn(f.real()), -sgn(f.imag())};
                }
                dft2_inplace(buf, d.h, d.w, -1);
                for (std::size_t i = 0; i < plane; ++i) {
                    const std::size_t dst = (b * plane + i) * d.c + c;
                    const double v = scale * buf[i].real();
                    if (gp) gp[dst] += static_cast<T>(v);
                    if (gt) gt[dst] -= static_cast<T>(v);
                }
            }
    });
    return out;
}

template <typename T>
Tensor<T> restoration_loss(const Tensor<T>& pred, const Tensor<T>& target, const LossConfig& config) {
    config.validate();
    const Tensor<T> c = charbonnier(pred, target, config.epsilon);
    if (config.lambda == 0.0) return c;
    return ops::add(c, ops::scale(fourier_l1(pred, target), static_cast<T>(config.lambda)));
}

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
    require_same(a.shape(), b.shape(), "psnr");
    const std::size_t n = a.numel();
    if (n == 0) throw ShapeError("psnr of empty images");
    double se = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        se += d * d;
    }
    if (se == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(static_cast<double>(n) / se);
}

std::vector<double> ssim_taps() {
    std::vector<double> taps(kSsimWindow);
    const double centre = static_cast<double>(kSsimWindow / 2);
    double sum = 0.0;
    for (std::size_t i = 0; i < kSsimWindow; ++i) {
        const double x = static_cast<double>(i) - centre;
        taps[i] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
        sum += taps[i];
    }
    for (double& t : taps) t /= sum;
    return taps;
}

namespace {

// Valid-mode separable filtering of an H x W plane.
std::vector<double> filter_valid(const std::vector<double>& x, std::size_t H, std::size_t W,
                                 const std::vector<double>& taps) {
    const std::size_t K = taps.size();
    const std::size_t oh = H - K + 1;
    const std::size_t ow = W - K + 1;
    std::vector<double> rows(H * ow);
    for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < K; ++k) acc += taps[k] * x[i * W + j + k];
            rows[i * ow + j] = acc;
        }
    std::vector<double> out(oh * ow);
    for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < K; ++k) acc += taps[k] * rows[(i + k) * ow + j];
            out[i * ow + j] = acc;
        }
    return out;
}

}  // namespace

template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
    require_same(a.shape(), b.shape(), "ssim");
    const ImageDims d = image_dims(a.shape(), "ssim");
    if (d.h < kSsimWindow || d.w < kSsimWindow) {
        throw ShapeError("ssim needs images of at least " + std::to_string(kSsimWindow) + "x" +
                         std::to_string(kSsimWindow) + ", got " + std::to_string(d.h) + "x" +
                         std::to_string(d.w));
    }
    const auto taps = ssim_taps();
    const double c1 = (kSsimK1 * 1.0) * (kSsimK1 * 1.0);
    const double c2 = (kSsimK2 * 1.0) * (kSsimK2 * 1.0);
    const std::size_t plane = d.h * d.w;
    const auto av = a.data();
    const auto bv = b.data();
    double total = 0.0;
    std::size_t count = 0;
    std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
    for (std::size_t n = 0; n < d.b; ++n)
        for (std::size_t c = 0; c < d.c; ++c) {
            for (std::size_t i = 0; i < plane; ++i) {
                const std::size_t src = (n * plane + i) * d.c + c;
                x[i] = static_cast<double>(av[src]);
                y[i] = static_cast<double>(bv[src]);
                xx[i] = x[i] * x[i];
                yy[i] = y[i] * y[i];
                xy[i] = x[i] * y[i];
            }
            const auto mx = filter_valid(x, d.h, d.w, taps);
            const auto my = filter_valid(y, d.h, d.w, taps);
            const auto sxx = filter_valid(xx, d.h, d.w, taps);
            const auto syy = filter_valid(yy, d.h, d.w, taps);
            const auto sxy = filter_valid(xy, d.h, d.w, taps);
            for (std::size_t i = 0; i < mx.size(); ++i) {
                const double vx = sxx[i] - mx[i] * mx[i];
                const double vy = syy[i] - my[i] * my[i];
                const double cov = sxy[i] - mx[i] * my[i];
                total += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
                         ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
                ++count;
            }
        }
    return total / static_cast<double>(count);
}

#define CUMAMBA_INSTANTIATE_OBJECTIVE(T)                                                       \
    template ComplexGrid dft2<T>(const Tensor<T>&);                                            \
    template Tensor<T> charbonnier<T>(const Tensor<T>&, const Tensor<T>&, double);             \
    template Tensor<T> fourier_l1<T>(const Tensor<T>&, const Tensor<T>&);                      \
    template Tensor<T> restoration_loss<T>(const Tensor<T>&, const Tensor<T>&, const LossConfig&); \
    template double psnr<T>(const Tensor<T>&, const Tensor<T>&);                               \
    template double ssim<T>(const Tensor<T>&, const Tensor<T>&);

CUMAMBA_INSTANTIATE_OBJECTIVE(float)
CUMAMBA_INSTANTIATE_OBJECTIVE(double)

}  // namespace cumamba
