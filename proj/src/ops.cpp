#include "cumamba/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>

#include "cumamba/simd/kernels.hpp"

namespace cumamba::ops {

using detail::ImplPtr;

namespace {

template <typename T>
T* grad_ptr(const ImplPtr<T>& p) {
    return (p && p->requires_grad) ? p->grad_buffer().data() : nullptr;
}

std::vector<std::size_t> contiguous_strides(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

// Strides of `in` expressed over the axes of `out` (0 on broadcast axes).
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<std::size_t> st(out.size(), 0);
    const auto cs = contiguous_strides(in);
    const std::size_t off = out.size() - in.size();
    for (std::size_t i = 0; i < in.size(); ++i) {
        if (in[i] != 1) st[off + i] = cs[i];
    }
    return st;
}

template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
    const std::size_t total = shape_numel(out);
    if (total == 0) return;
    const std::size_t nd = out.size();
    if (nd == 0) {
        f(std::size_t{0}, std::size_t{0}, std::size_t{0});
        return;
    }
    const std::size_t inner = out[nd - 1];
    const std::size_t ia = sa[nd - 1];
    const std::size_t ib = sb[nd - 1];
    const std::size_t outer = total / inner;
    std::vector<std::size_t> idx(nd, 0);
    std::size_t offa = 0;
    std::size_t offb = 0;
    for (std::size_t o = 0; o < outer; ++o) {
        const std::size_t base = o * inner;
        for (std::size_t j = 0; j < inner; ++j) f(base + j, offa + j * ia, offb + j * ib);
        for (std::size_t d = nd - 1; d-- > 0;) {
            ++idx[d];
            offa += sa[d];
            offb += sb[d];
            if (idx[d] < out[d]) break;
            offa -= sa[d] * out[d];
            offb -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

template <typename T>
T sigmoid_value(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
T softplus_value(T x) {
    if (x > T(20)) return x;
    if (x < T(-20)) return std::exp(x);
    return std::log1p(std::exp(x));
}

const char* unary_name(UnaryOp op) {
    switch (op) {
        case UnaryOp::kExp: return "exp";
        case UnaryOp::kSoftplus: return "softplus";
        case UnaryOp::kSilu: return "silu";
        case UnaryOp::kSigmoid: return "sigmoid";
        case UnaryOp::kLeakyRelu: return "leaky_relu";
        case UnaryOp::kNeg: return "neg";
    }
    return "unary";
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t nd = std::max(a.size(), b.size());
    Shape out(nd, 1);
    for (std::size_t i = 0; i < nd; ++i) {
        const std::size_t da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
        const std::size_t db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) +
                             " are not broadcast-compatible");
        }
        out[i] = da == 1 ? db : da;
    }
    return out;
}

template <typename T>
Tensor<T> elementwise(UnaryOp op, const Tensor<T>& x) {
    const auto xs = x.data();
    const std::size_t n = xs.size();
    std::vector<T> y(n);
    switch (op) {
        case UnaryOp::kExp: simd::exp(xs.data(), y.data(), n); break;
        case UnaryOp::kSoftplus:
            for (std::size_t i = 0; i < n; ++i) y[i] = softplus_value(xs[i]);
            break;
        case UnaryOp::kSilu:
            for (std::size_t i = 0; i < n; ++i) y[i] = xs[i] * sigmoid_value(xs[i]);
            break;
        case UnaryOp::kSigmoid:
            for (std::size_t i = 0; i < n; ++i) y[i] = sigmoid_value(xs[i]);
            break;
        case UnaryOp::kLeakyRelu:
            for (std::size_t i = 0; i < n; ++i)
                y[i] = xs[i] > T(0) ? xs[i] : static_cast<T>(kLeakySlope) * xs[i];
            break;
        case UnaryOp::kNeg:
            for (std::size_t i = 0; i < n; ++i) y[i] = -xs[i];
            break;
    }
    Tensor<T> out(x.shape(), std::move(y));
    if (!detail::needs_graph<T>({&x})) return out;
    ImplPtr<T> xi = x.impl();
    ImplPtr<T> yi = out.impl();
    // The output values are read through a weak handle: the node must not
    // keep its own output alive.
    std::weak_ptr<detail::TensorImpl<T>> yw = yi;
    detail::attach<T>(out, unary_name(op), {xi}, [op, xi, yw](std::span<const T> g) {
        T* gx = xi->grad_buffer().data();
        const auto& xv = xi->data;
        const std::size_t m = xv.size();
        switch (op) {
            case UnaryOp::kExp: {
                auto y = yw.lock();
                for (std::size_t i = 0; i < m; ++i) gx[i] += g[i] * y->data[i];
                break;
            }
            case UnaryOp::kSoftplus:
                for (std::size_t i = 0; i < m; ++i) gx[i] += g[i] * sigmoid_value(xv[i]);
                break;
            case UnaryOp::kSilu:
                for (std::size_t i = 0; i < m; ++i) {
                    const T s = sigmoid_value(xv[i]);
                    gx[i] += g[i] * s * (T(1) + xv[i] * (T(1) - s));
                }
                break;
            case UnaryOp::kSigmoid:
                for (std::size_t i = 0; i < m; ++i) {
                    const T s = sigmoid_value(xv[i]);
                    gx[i] += g[i] * s * (T(1) - s);
                }
                break;
            case UnaryOp::kLeakyRelu:
                for (std::size_t i = 0; i < m; ++i)
                    gx[i] += xv[i] > T(0) ? g[i] : static_cast<T>(kLeakySlope) * g[i];
                break;
            case UnaryOp::kNeg:
                for (std::size_t i = 0; i < m; ++i) gx[i] -= g[i];
                break;
        }
    });
    return out;
}

template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b) {
    const Shape out_shape = broadcast_shape(a.shape(), b.shape());
    const auto sa = broadcast_strides(a.shape(), out_shape);
    const auto sb = broadcast_strides(b.shape(), out_shape);
    const auto av = a.data();
    const auto bv = b.data();
    std::vector<T> y(shape_numel(out_shape));
    if (a.shape() == b.shape()) {
        const std::size_t n = y.size();
        switch (op) {
            case BinaryOp::kAdd: for (std::size_t i = 0; i < n; ++i) y[i] = av[i] + bv[i]; break;
            case BinaryOp::kSub: for (std::size_t i = 0; i < n; ++i) y[i] = av[i] - bv[i]; break;
            case BinaryOp::kMul: for (std::size_t i = 0; i < n; ++i) y[i] = av[i] * bv[i]; break;
        }
    } else {
        for_each_broadcast(out_shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            switch (op) {
                case BinaryOp::kAdd: y[i] = av[ia] + bv[ib]; break;
                case BinaryOp::kSub: y[i] = av[ia] - bv[ib]; break;
                case BinaryOp::kMul: y[i] = av[ia] * bv[ib]; break;
            }
        });
    }
    Tensor<T> out(out_shape, std::move(y));
    if (!detail::needs_graph<T>({&a, &b})) return out;
    ImplPtr<T> ai = a.impl();
    ImplPtr<T> bi = b.impl();
    const char* name = op == BinaryOp::kAdd ? "add" : op == BinaryOp::kSub ? "sub" : "mul";
    detail::attach<T>(out, name, {ai, bi}, [op, ai, bi, out_shape, sa, sb](std::span<const T> g) {
        T* ga = grad_ptr(ai);
        T* gb = grad_ptr(bi);
        const auto& av = ai->data;
        const auto& bv = bi->data;
        for_each_broadcast(out_shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            switch (op) {
                case BinaryOp::kAdd:
                    if (ga) ga[ia] += g[i];
                    if (gb) gb[ib] += g[i];
                    break;
                case BinaryOp::kSub:
                    if (ga) ga[ia] += g[i];
                    if (gb) gb[ib] -= g[i];
                    break;
                case BinaryOp::kMul:
                    if (ga) ga[ia] += g[i] * bv[ib];
                    if (gb) gb[ib] += g[i] * av[ia];
                    break;
            }
        });
    });
    return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
    const auto xs = x.data();
    std::vector<T> y(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) y[i] = xs[i] * factor;
    Tensor<T> out(x.shape(), std::move(y));
    if (!detail::needs_graph<T>({&x})) return out;
    ImplPtr<T> xi = x.impl();
    detail::attach<T>(out, "scale", {xi}, [xi, factor](std::span<const T> g) {
        T* gx = xi->grad_buffer().data();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
    });
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = T(0);
    for (T v : x.data()) acc += v;
    Tensor<T> out = Tensor<T>::scalar(acc);
    if (!detail::needs_graph<T>({&x})) return out;
    ImplPtr<T> xi = x.impl();
    detail::attach<T>(out, "sum", {xi}, [xi](std::span<const T> g) {
        T* gx = xi->grad_buffer().data();
        for (std::size_t i = 0; i < xi->data.size(); ++i) gx[i] += g[0];
    });
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    const std::size_t n = x.numel();
    if (n == 0) throw ShapeError("mean of an empty tensor");
    return scale(sum(x), T(1) / static_cast<T>(n));
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.dim() == 2 && b.dim() == 2,
            "matmul needs 2-D operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const std::size_t m = a.size(0);
    const std::size_t k = a.size(1);
    const std::size_t n = b.size(1);
    require(b.size(0) == k, "matmul inner dimensions differ: " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
    std::vector<T> y(m * n);
    simd::gemm<T>(false, false, m, n, k, a.data().data(), k, b.data().data(), n, y.data(), n, false);
    Tensor<T> out(Shape{m, n}, std::move(y));
    if (!detail::needs_graph<T>({&a, &b})) return out;
    ImplPtr<T> ai = a.impl();
    ImplPtr<T> bi = b.impl();
    detail::attach<T>(out, "matmul", {ai, bi}, [ai, bi, m, n, k](std::span<const T> g) {
        if (T* ga = grad_ptr(ai)) {
            simd::gemm<T>(false, true, m, k, n, g.data(), n, bi->data.data(), n, ga, k, true);
        }
        if (T* gb = grad_ptr(bi)) {
            simd::gemm<T>(true, false, k, n, m, ai->data.data(), k, g.data(), n, gb, n, true);
        }
    });
    return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    require(x.dim() >= 1 && w.dim() == 2, "linear needs x[..., K] and w[K, N], got " +
                                              shape_str(x.shape()) + " and " + shape_str(w.shape()));
    const std::size_t k = w.size(0);
    const std::size_t n = w.size(1);
    require(x.shape().back() == k, "linear input width " + std::to_string(x.shape().back()) +
                                       " does not match weight " + shape_str(w.shape()));
    const bool has_bias = bias.defined();
    if (has_bias) {
        require(bias.dim() == 1 && bias.size(0) == n,
                "linear bias " + shape_str(bias.shape()) + " does not match width " +
                    std::to_string(n));
    }
    const std::size_t rows = x.numel() / k;
    std::vector<T> y(rows * n);
    if (has_bias) {
        const auto bv = bias.data();
        for (std::size_t r = 0; r < rows; ++r) std::copy(bv.begin(), bv.end(), y.begin() + r * n);
    }
    simd::gemm<T>(false, false, rows, n, k, x.data().data(), k, w.data().data(), n, y.data(), n,
                  has_bias);
    Shape out_shape = x.shape();
    out_shape.back() = n;
    Tensor<T> out(out_shape, std::move(y));
    if (!detail::needs_graph<T>({&x, &w, &bias})) return out;
    ImplPtr<T> xi = x.impl();
    ImplPtr<T> wi = w.impl();
    ImplPtr<T> bi = has_bias ? bias.impl() : nullptr;
    std::vector<ImplPtr<T>> inputs{xi, wi};
    if (bi) inputs.push_back(bi);
    detail::attach<T>(out, "linear", std::move(inputs), [xi, wi, bi, rows, n, k](std::span<const T> g) {
        if (T* gx = grad_ptr(xi)) {
            simd::gemm<T>(false, true, rows, k, n, g.data(), n, wi->data.data(), n, gx, k, true);
        }
        if (T* gw = grad_ptr(wi)) {
            simd::gemm<T>(true, false, k, n, rows, xi->data.data(), k, g.data(), n, gw, n, true);
        }
        if (T* gb = grad_ptr(bi)) {
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
        }
    });
    return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    require(shape_numel(shape) == x.numel(), "cannot reshape " + shape_str(x.shape()) + " to " +
                                                 shape_str(shape) + ": element counts differ");
    Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
    if (!detail::needs_graph<T>({&x})) return out;
    ImplPtr<T> xi = x.impl();
    detail::attach<T>(out, "reshape", {xi}, [xi](std::span<const T> g) { xi->accumulate(g); });
    return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
    const Shape& in = x.shape();
    const std::size_t nd = in.size();
    require(perm.size() == nd, "permutation rank " + std::to_string(perm.size()) +
                                   " does not match " + shape_str(in));
    std::vector<bool> used(nd, false);
    for (std::size_t p : perm) {
        require(p < nd && !used[p], "invalid permutation for " + shape_str(in));
        used[p] = true;
    }
    Shape out_shape(nd);
    const auto in_strides = contiguous_strides(in);
    std::vector<std::size_t> src_strides(nd);
    for (std::size_t i = 0; i < nd; ++i) {
        out_shape[i] = in[perm[i]];
        src_strides[i] = in_strides[perm[i]];
    }
    const std::vector<std::size_t> zero(nd, 0);
    const auto xv = x.data();
    std::vector<T> y(x.numel());
    for_each_broadcast(out_shape, src_strides, zero,
                       [&](std::size_t i, std::size_t src, std::size_t) { y[i] = xv[src]; });
    Tensor<T> out(out_shape, std::move(y));
    if (!detail::needs_graph<T>({&x})) return out;
    ImplPtr<T> xi = x.impl();
    detail::attach<T>(out, "permute", {xi}, [xi, out_shape, src_strides, zero](std::span<const T> g) {
        T* gx = xi->grad_buffer().data();
        for_each_broadcast(out_shape, src_strides, zero,
                           [&](std::size_t i, std::size_t src, std::size_t) { gx[src] += g[i]; });
    });
    return out;
}

template <typename T>
Tensor<T> concat_last(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.dim() >= 1 && a.dim() == b.dim(),
            "concat needs equal ranks, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    for (std::size_t i = 0; i + 1 < a.dim(); ++i) {
        require(a.size(i) == b.size(i), "concat leading extents differ: " + shape_str(a.shape()) +
                                            " vs " + shape_str(b.shape()));
    }
    const std::size_t ca = a.shape().back();
    const std::size_t cb = b.shape().back();
    const std::size_t rows = ca == 0 ? b.numel() / std::max<std::size_t>(cb, 1) : a.numel() / ca;
    const std::size_t c = ca + cb;
    std::vector<T> y(rows * c);
    const auto av = a.data();
    const auto bv = b.data();
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(av.begin() + r * ca, ca, y.begin() + r * c);
        std::copy_n(bv.begin() + r * cb, cb, y.begin() + r * c + ca);
    }
    Shape out_shape = a.shape();
    out_shape.back() = c;
    Tensor<T> out(out_shape, std::move(y));
    if (!detail::needs_graph<T>({&a, &b})) return out;
    ImplPtr<T> ai = a.impl();
    ImplPtr<T> bi = b.impl();
    detail::attach<T>(out, "concat", {ai, bi}, [ai, bi, rows, ca, cb](std::span<const T> g) {
        const std::size_t c = ca + cb;
        if (T* ga = grad_ptr(ai)) {
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < ca; ++j) ga[r * ca + j] += g[r * c + j];
        }
        if (T* gb = grad_ptr(bi)) {
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < cb; ++j) gb[r * cb + j] += g[r * c + ca + j];
        }
    });
    return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    require(x.dim() >= 1, "layer_norm needs at least one axis");
    const std::size_t c = x.shape().back();
    require(gamma.dim() == 1 && gamma.size(0) == c && beta.dim() == 1 && beta.size(0) == c,
            "layer_norm affine parameters must have shape [" + std::to_string(c) + "], got " +
                shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
    const std::size_t rows = c == 0 ? 0 : x.numel() / c;
    const auto xv = x.data();
    const auto gv = gamma.data();
    const auto bv = beta.data();
    auto xhat = std::make_shared<std::vector<T>>(x.numel());
    auto rstd = std::make_shared<std::vector<T>>(rows);
    std::vector<T> y(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = xv.data() + r * c;
        T m = T(0);
        for (std::size_t j = 0; j < c; ++j) m += xr[j];
        m /= static_cast<T>(c);
        T var = T(0);
        for (std::size_t j = 0; j < c; ++j) var += (xr[j] - m) * (xr[j] - m);
        var /= static_cast<T>(c);
        const T rs = T(1) / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        for (std::size_t j = 0; j < c; ++j) {
            const T xh = (xr[j] - m) * rs;
            (*xhat)[r * c + j] = xh;
            y[r * c + j] = xh * gv[j] + bv[j];
        }
    }
    Tensor<T> out(x.shape(), std::move(y));
    if (!detail::needs_graph<T>({&x, &gamma, &beta})) return out;
    ImplPtr<T> xi = x.impl();
    ImplPtr<T> gi = gamma.impl();
    ImplPtr<T> bi = beta.impl();
    detail::attach<T>(out, "layer_norm", {xi, gi, bi},
                      [xi, gi, bi, xhat, rstd, rows, c](std::span<const T> g) {
        T* gx = grad_ptr(xi);
        T* gg = grad_ptr(gi);
        T* gb = grad_ptr(bi);
        const auto& gamma_v = gi->data;
        std::vector<T> dxh(c);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* gr = g.data() + r * c;
            const T* xh = xhat->data() + r * c;
            if (gg) for (std::size_t j = 0; j < c; ++j) gg[j] += gr[j] * xh[j];
            if (gb) for (std::size_t j = 0; j < c; ++j) gb[j] += gr[j];
            if (!gx) continue;
            T mean_d = T(0);
            T mean_dx = T(0);
            for (std::size_t j = 0; j < c; ++j) {
                dxh[j] = gr[j] * gamma_v[j];
                mean_d += dxh[j];
                mean_dx += dxh[j] * xh[j];
            }
            mean_d /= static_cast<T>(c);
            mean_dx /= static_cast<T>(c);
            const T rs = (*rstd)[r];
            for (std::size_t j = 0; j < c; ++j)
                gx[r * c + j] += rs * (dxh[j] - mean_d - xh[j] * mean_dx);
        }
    });
    return out;
}

namespace {

struct Nhwc {
    std::size_t b, h, w, c;
};

template <typename T>
Nhwc nhwc_of(const Tensor<T>& x, const char* what) {
    require(x.dim() == 4, std::string(what) + " expects a [B, H, W, C] feature map, got " +
                              shape_str(x.shape()));
    return {x.size(0), x.size(1), x.size(2), x.size(3)};
}

template <typename T>
void check_bias(const Tensor<T>& bias, std::size_t cout, const char* what) {
    if (!bias.defined()) return;
    require(bias.dim() == 1 && bias.size(0) == cout,
            std::string(what) + " bias " + shape_str(bias.shape()) + " does not match " +
                std::to_string(cout) + " output channels");
}

template <typename T>
Tensor<T> depthwise3x3(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    const Nhwc s = nhwc_of(x, "depthwise3x3");
    require(w.dim() == 3 && w.size(0) == 3 && w.size(1) == 3 && w.size(2) == s.c,
            "depthwise3x3 kernel " + shape_str(w.shape()) + " does not match " +
                std::to_string(s.c) + " input channels (groups must equal channels)");
    check_bias(bias, s.c, "depthwise3x3");
    const auto xv = x.data();
    const auto wv = w.data();
    std::vector<T> y(x.numel(), T(0));
    const std::size_t C = s.c;
    for (std::size_t b = 0; b < s.b; ++b) {
        for (std::size_t i = 0; i < s.h; ++i) {
            for (std::size_t j = 0; j < s.w; ++j) {
                T* out = y.data() + ((b * s.h + i) * s.w + j) * C;
                if (bias.defined()) std::copy_n(bias.data().begin(), C, out);
                for (std::size_t ky = 0; ky < 3; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(i + ky) - 1;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h)) continue;
                    for (std::size_t kx = 0; kx < 3; ++kx) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(j + kx) - 1;
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.w)) continue;
                        const T* in = xv.data() + ((b * s.h + iy) * s.w + ix) * C;
                        const T* k = wv.data() + (ky * 3 + kx) * C;
                        for (std::size_t c = 0; c < C; ++c) out[c] += k[c] * in[c];
                    }
                }
            }
        }
    }
    Tensor<T> out(x.shape(), std::move(y));
    if (!detail::needs_graph<T>({&x, &w, &bias})) return out;
    ImplPtr<T> xi = x.impl();
    ImplPtr<T> wi = w.impl();
    ImplPtr<T> bi = bias.defined() ? bias.impl() : nullptr;
    std::vector<ImplPtr<T>> inputs{xi, wi};
    if (bi) inputs.push_back(bi);
    detail::attach<T>(out, "depthwise3x3", std::move(inputs), [xi, wi, bi, s](std::span<const T> g) {
        T* gx = grad_ptr(xi);
        T* gw = grad_ptr(wi);
        T* gb = grad_ptr(bi);
        const auto& xv = xi->data;
        const auto& wv = wi->data;
        const std::size_t C = s.c;
        for (std::size_t b = 0; b < s.b; ++b) {
            for (std::size_t i = 0; i < s.h; ++i) {
                for (std::size_t j = 0; j < s.w; ++j) {
                    const T* go = g.data() + ((b * s.h + i) * s.w + j) * C;
                    if (gb) for (std::size_t c = 0; c < C; ++c) gb[c] += go[c];
                    for (std::size_t ky = 0; ky < 3; ++ky) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(i + ky) - 1;
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h)) continue;
                        for (std::size_t kx = 0; kx < 3; ++kx) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(j + kx) - 1;
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.w)) continue;
                            const std::size_t in_off = ((b * s.h + iy) * s.w + ix) * C;
                            const std::size_t k_off = (ky * 3 + kx) * C;
                            if (gx) for (std::size_t c = 0; c < C; ++c) gx[in_off + c] += wv[k_off + c] * go[c];
                            if (gw) for (std::size_t c = 0; c < C; ++c) gw[k_off + c] += xv[in_off + c] * go[c];
                        }
                    }
                }
            }
        }
    });
    return out;
}

// Rows of the 3x3 patch matrix: [(b, i, j), (ky, kx, c)].
template <typename T>
void im2col3x3(const T* x, const Nhwc& s, T* col) {
    const std::size_t C = s.c;
    const std::size_t row_len = 9 * C;
    for (std::size_t b = 0; b < s.b; ++b) {
        for (std::size_t i = 0; i < s.h; ++i) {
            for (std::size_t j = 0; j < s.w; ++j) {
                T* row = col + ((b * s.h + i) * s.w + j) * row_len;
                for (std::size_t ky = 0; ky < 3; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(i + ky) - 1;
                    for (std::size_t kx = 0; kx < 3; ++kx) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(j + kx) - 1;
                        T* dst = row + (ky * 3 + kx) * C;
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h) || ix < 0 ||
                            ix >= static_cast<std::ptrdiff_t>(s.w)) {
                            std::fill_n(dst, C, T(0));
                        } else {
                            std::copy_n(x + ((b * s.h + iy) * s.w + ix) * C, C, dst);
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im3x3(const T* col, const Nhwc& s, T* gx) {
    const std::size_t C = s.c;
    const std::size_t row_len = 9 * C;
    for (std::size_t b = 0; b < s.b; ++b) {
        for (std::size_t i = 0; i < s.h; ++i) {
            for (std::size_t j = 0; j < s.w; ++j) {
                const T* row = col + ((b * s.h + i) * s.w + j) * row_len;
                for (std::size_t ky = 0; ky < 3; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(i + ky) - 1;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h)) continue;
                    for (std::size_t kx = 0; kx < 3; ++kx) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(j + kx) - 1;
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.w)) continue;
                        const T* src = row + (ky * 3 + kx) * C;
                        T* dst = gx + ((b * s.h + iy) * s.w + ix) * C;
                        for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
                    }
                }
            }
        }
    }
}

// y = col * w for a [rows, k] patch matrix gathered from x. `scatter_back`
// adds a patch-matrix gradient into the gradient of x.
template <typename T, typename ScatterBack>
Tensor<T> patch_product(const char* name, const Tensor<T>& x, const Tensor<T>& w,
                        std::shared_ptr<std::vector<T>> col,
                        std::size_t rows, std::size_t k, std::size_t n, Shape out_shape,
                        ScatterBack scatter_back) {
    std::vector<T> y(rows * n);
    simd::gemm<T>(false, false, rows, n, k, col->data(), k, w.data().data(), n, y.data(), n, false);
    Tensor<T> out(std::move(out_shape), std::move(y));
    if (!detail::needs_graph<T>({&x, &w})) return out;
    ImplPtr<T> xi = x.impl();
    ImplPtr<T> wi = w.impl();
    detail::attach<T>(out, name, {xi, wi}, [xi, wi, col, rows, k, n, scatter_back](std::span<const T> g) {
        if (T* gw = grad_ptr(wi)) {
            simd::gemm<T>(true, false, k, n, rows, col->data(), k, g.data(), n, gw, n, true);
        }
        if (T* gx = grad_ptr(xi)) {
            std::vector<T> dcol(rows * k);
            simd::gemm<T>(false, true, rows, k, n, g.data(), n, wi->data.data(), n, dcol.data(), k,
                          false);
            scatter_back(dcol.data(), gx);
        }
    });
    return out;
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, ConvKind kind) {
    switch (kind) {
        case ConvKind::kPointwise1x1: {
            const Nhwc s = nhwc_of(x, "pointwise1x1");
            require(w.dim() == 2 && w.size(0) == s.c,
                    "pointwise1x1 kernel " + shape_str(w.shape()) + " does not match " +
                        std::to_string(s.c) + " input channels");
            check_bias(bias, w.size(1), "pointwise1x1");
            return linear(x, w, bias);
        }
        case ConvKind::kDepthwise3x3: return depthwise3x3(x, w, bias);
        case ConvKind::kPlain3x3:
        case ConvKind::kStrided2x2:
        case ConvKind::kTransposed2x2: break;
    }
    // Matrix-product kinds. The weight is reshaped through the graph so
    // gradients reach the caller's tensor.
    const Nhwc s = nhwc_of(x, "conv2d");
    Tensor<T> w2;
    Shape out_shape;
    std::size_t cout = 0;
    if (kind == ConvKind::kPlain3x3) {
        require(w.dim() == 4 && w.size(0) == 3 && w.size(1) == 3 && w.size(2) == s.c,
                "plain3x3 kernel " + shape_str(w.shape()) + " does not match " +
                    std::to_string(s.c) + " input channels");
        cout = w.size(3);
        w2 = reshape(w, Shape{9 * s.c, cout});
        out_shape = {s.b, s.h, s.w, cout};
    } else if (kind == ConvKind::kStrided2x2) {
        require(w.dim() == 4 && w.size(0) == 2 && w.size(1) == 2 && w.size(2) == s.c,
                "strided2x2 kernel " + shape_str(w.shape()) + " does not match " +
                    std::to_string(s.c) + " input channels");
        require(s.h % 2 == 0 && s.w % 2 == 0,
                "strided2x2 needs even H and W, got " + shape_str(x.shape()));
        cout = w.size(3);
        w2 = reshape(w, Shape{4 * s.c, cout});
        out_shape = {s.b, s.h / 2, s.w / 2, cout};
    } else {
        require(w.dim() == 4 && w.size(0) == s.c && w.size(1) == 2 && w.size(2) == 2,
                "transposed2x2 kernel " + shape_str(w.shape()) + " does not match " +
                    std::to_string(s.c) + " input channels");
        cout = w.size(3);
        w2 = reshape(w, Shape{s.c, 4 * cout});
        out_shape = {s.b, s.h * 2, s.w * 2, cout};
    }
    check_bias(bias, cout, "conv2d");

    Tensor<T> y;
    if (kind == ConvKind::kPlain3x3) {
        const std::size_t rows = s.b * s.h * s.w;
        const std::size_t k = 9 * s.c;
        auto col = std::make_shared<std::vector<T>>(rows * k);
        im2col3x3(x.data().data(), s, col->data());
        y = patch_product<T>("plain3x3", x, w2, col, rows, k, cout, out_shape,
                             [s](const T* dcol, T* gx) { col2im3x3(dcol, s, gx); });
    } else if (kind == ConvKind::kStrided2x2) {
        const std::size_t ho = s.h / 2;
        const std::size_t wo = s.w / 2;
        const std::size_t rows = s.b * ho * wo;
        const std::size_t k = 4 * s.c;
        auto col = std::make_shared<std::vector<T>>(rows * k);
        const auto xv = x.data();
        for (std::size_t b = 0; b < s.b; ++b)
            for (std::size_t i = 0; i < ho; ++i)
                for (std::size_t j = 0; j < wo; ++j)
                    for (std::size_t ky = 0; ky < 2; ++ky)
                        for (std::size_t kx = 0; kx < 2; ++kx)
                            std::copy_n(xv.begin() + ((b * s.h + 2 * i + ky) * s.w + 2 * j + kx) * s.c,
                                        s.c,
                                        col->begin() + ((b * ho + i) * wo + j) * k + (ky * 2 + kx) * s.c);
        y = patch_product<T>("strided2x2", x, w2, col, rows, k, cout, out_shape,
                             [s, ho, wo, k](const T* dcol, T* gx) {
            for (std::size_t b = 0; b < s.b; ++b)
                for (std::size_t i = 0; i < ho; ++i)
                    for (std::size_t j = 0; j < wo; ++j)
                        for (std::size_t ky = 0; ky < 2; ++ky)
                            for (std::size_t kx = 0; kx < 2; ++kx) {
                                const T* src = dcol + ((b * ho + i) * wo + j) * k + (ky * 2 + kx) * s.c;
                                T* dst = gx + ((b * s.h + 2 * i + ky) * s.w + 2 * j + kx) * s.c;
                                for (std::size_t c = 0; c < s.c; ++c) dst[c] += src[c];
                            }
        });
    } else {
        // [B*H*W, Cin] x [Cin, (ky, kx, cout)] followed by depth-to-space.
        Tensor<T> flat = reshape(x, Shape{s.b * s.h * s.w, s.c});
        Tensor<T> prod = matmul(flat, w2);
        Tensor<T> blocks = reshape(prod, Shape{s.b, s.h, s.w, 2, 2, cout});
        Tensor<T> spread = permute(blocks, {0, 1, 3, 2, 4, 5});
        y = reshape(spread, out_shape);
    }
    if (bias.defined()) y = add(y, bias);
    return y;
}

template <typename T>
Tensor<T> causal_conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    require(x.dim() == 3, "causal_conv1d expects x[B, L, D], got " + shape_str(x.shape()));
    const std::size_t B = x.size(0);
    const std::size_t L = x.size(1);
    const std::size_t D = x.size(2);
    require(w.dim() == 2 && w.size(1) == D && w.size(0) >= 1,
            "causal_conv1d kernel " + shape_str(w.shape()) + " does not match width " +
                std::to_string(D));
    check_bias(bias, D, "causal_conv1d");
    const std::size_t K = w.size(0);
    const auto xv = x.data();
    const auto wv = w.data();
    std::vector<T> y(x.numel(), T(0));
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t t = 0; t < L; ++t) {
            T* out = y.data() + (b * L + t) * D;
            if (bias.defined()) std::copy_n(bias.data().begin(), D, out);
            for (std::size_t k = 0; k < K; ++k) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(K - 1);
                if (src < 0) continue;
                const T* in = xv.data() + (b * L + static_cast<std::size_t>(src)) * D;
                const T* kw = wv.data() + k * D;
                for (std::size_t d = 0; d < D; ++d) out[d] += kw[d] * in[d];
            }
        }
    }
    Tensor<T> out(x.shape(), std::move(y));
    if (!detail::needs_graph<T>({&x, &w, &bias})) return out;
    ImplPtr<T> xi = x.impl();
    ImplPtr<T> wi = w.impl();
    ImplPtr<T> bi = bias.defined() ? bias.impl() : nullptr;
    std::vector<ImplPtr<T>> inputs{xi, wi};
    if (bi) inputs.push_back(bi);
    detail::attach<T>(out, "causal_conv1d", std::move(inputs), [xi, wi, bi, B, L, D, K](std::span<const T> g) {
        T* gx = grad_ptr(xi);
        T* gw = grad_ptr(wi);
        T* gb = grad_ptr(bi);
        const auto& xv = xi->data;
        const auto& wv = wi->data;
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t t = 0; t < L; ++t) {
                const T* go = g.data() + (b * L + t) * D;
                if (gb) for (std::size_t d = 0; d < D; ++d) gb[d] += go[d];
                for (std::size_t k = 0; k < K; ++k) {
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(K - 1);
                    if (src < 0) continue;
                    const std::size_t off = (b * L + static_cast<std::size_t>(src)) * D;
                    if (gx) for (std::size_t d = 0; d < D; ++d) gx[off + d] += wv[k * D + d] * go[d];
                    if (gw) for (std::size_t d = 0; d < D; ++d) gw[k * D + d] += xv[off + d] * go[d];
                }
            }
        }
    });
    return out;
}

#define CUMAMBA_INSTANTIATE_OPS(T)                                                              \
    template Tensor<T> elementwise<T>(UnaryOp, const Tensor<T>&);                               \
    template Tensor<T> elementwise<T>(BinaryOp, const Tensor<T>&, const Tensor<T>&);            \
    template Tensor<T> scale<T>(const Tensor<T>&, T);                                           \
    template Tensor<T> sum<T>(const Tensor<T>&);                                                \
    template Tensor<T> mean<T>(const Tensor<T>&);                                               \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                           \
    template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
    template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                     \
    template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<std::size_t>&);           \
    template Tensor<T> concat_last<T>(const Tensor<T>&, const Tensor<T>&);                      \
    template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);  \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, ConvKind); \
    template Tensor<T> causal_conv1d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

CUMAMBA_INSTANTIATE_OPS(float)
CUMAMBA_INSTANTIATE_OPS(double)

}  // namespace cumamba::ops
