#include "cumamba/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "cumamba/ops.hpp"

namespace cumamba::ssm {

namespace {

template <typename T>
simd::RecurrenceView<T> sub_view(const simd::RecurrenceView<T>& v, std::size_t first,
                                 std::size_t steps) {
    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(first) * v.stride;
    simd::RecurrenceView<T> s = v;
    s.a = v.a + off;
    s.b = v.b + off;
    s.h = v.h != nullptr ? v.h + off : nullptr;
    s.steps = steps;
    return s;
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

}  // namespace

template <typename T>
void blelloch_exclusive(T* a, T* b, std::size_t n, std::size_t lanes) {
    if (n == 0) return;
    std::size_t m = 1;
    while (m < n) m *= 2;
    std::vector<T> xa(m * lanes, T(1));
    std::vector<T> xb(m * lanes, T(0));
    std::copy_n(a, n * lanes, xa.begin());
    std::copy_n(b, n * lanes, xb.begin());
    auto A = [&](std::size_t i) { return xa.data() + i * lanes; };
    auto B = [&](std::size_t i) { return xb.data() + i * lanes; };

    for (std::size_t d = 1; d < m; d *= 2) {
        for (std::size_t i = 2 * d - 1; i < m; i += 2 * d) {
            const std::size_t left = i - d;
            simd::compose(A(left), B(left), A(i), B(i), A(i), B(i), lanes);
        }
    }
    std::fill_n(A(m - 1), lanes, T(1));
    std::fill_n(B(m - 1), lanes, T(0));
    std::vector<T> ta(lanes);
    std::vector<T> tb(lanes);
    for (std::size_t d = m / 2; d >= 1; d /= 2) {
        for (std::size_t i = 2 * d - 1; i < m; i += 2 * d) {
            const std::size_t left = i - d;
            std::copy_n(A(left), lanes, ta.begin());
            std::copy_n(B(left), lanes, tb.begin());
            std::copy_n(A(i), lanes, A(left));
            std::copy_n(B(i), lanes, B(left));
            simd::compose(A(i), B(i), ta.data(), tb.data(), A(i), B(i), lanes);
        }
    }
    std::copy_n(xa.begin(), n * lanes, a);
    std::copy_n(xb.begin(), n * lanes, b);
}

template <typename T>
void linear_scan(const simd::RecurrenceView<T>& v, bool parallel, std::size_t chunk) {
    if (chunk == 0) throw std::invalid_argument("scan chunk must be positive");
    if (v.steps == 0 || v.lanes == 0) return;
    if (!parallel || chunk >= v.steps) {
        std::vector<T> state(v.lanes, T(0));
        simd::recurrence(v, state.data());
        return;
    }
    const std::size_t nc = (v.steps + chunk - 1) / chunk;
    std::vector<T> agg_a(nc * v.lanes);
    std::vector<T> agg_b(nc * v.lanes);
    const auto n_chunks = static_cast<std::ptrdiff_t>(nc);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t k = 0; k < n_chunks; ++k) {
        const std::size_t first = static_cast<std::size_t>(k) * chunk;
        auto s = sub_view(v, first, std::min(chunk, v.steps - first));
        s.h = nullptr;
        simd::aggregate(s, agg_a.data() + first / chunk * v.lanes, agg_b.data() + first / chunk * v.lanes);
    }
    blelloch_exclusive(agg_a.data(), agg_b.data(), nc, v.lanes);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t k = 0; k < n_chunks; ++k) {
        const std::size_t first = static_cast<std::size_t>(k) * chunk;
        auto s = sub_view(v, first, std::min(chunk, v.steps - first));
        // Carry-in state: the prefix element applied to h_{-1} = 0.
        std::vector<T> state(agg_b.begin() + static_cast<std::ptrdiff_t>(k * v.lanes),
                             agg_b.begin() + static_cast<std::ptrdiff_t>((k + 1) * v.lanes));
        simd::recurrence(s, state.data());
    }
}

template <typename T>
Discretized<T> discretize(const Tensor<T>& delta, const Tensor<T>& A, const Tensor<T>& B_t) {
    require(delta.dim() == 2 && A.dim() == 2 && B_t.dim() == 2,
            "discretize expects delta[L, C], A[C, N], B_t[L, N]");
    const std::size_t L = delta.size(0);
    const std::size_t C = delta.size(1);
    const std::size_t N = A.size(1);
    require(A.size(0) == C && B_t.size(0) == L && B_t.size(1) == N,
            "discretize shapes disagree: delta " + shape_str(delta.shape()) + ", A " +
                shape_str(A.shape()) + ", B_t " + shape_str(B_t.shape()));
    const auto dv = delta.data();
    for (std::size_t i = 0; i < dv.size(); ++i) {
        if (!(dv[i] > T(0))) {
            throw std::domain_error("discretize requires delta > 0, got " + std::to_string(dv[i]) +
                                    " at flat index " + std::to_string(i));
        }
    }
    const auto av = A.data();
    const auto bv = B_t.data();
    std::vector<T> abar(L * C * N);
    std::vector<T> bbar(L * C * N);
    for (std::size_t t = 0; t < L; ++t)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t n = 0; n < N; ++n) {
                const std::size_t i = (t * C + c) * N + n;
                abar[i] = dv[t * C + c] * av[c * N + n];
                bbar[i] = dv[t * C + c] * bv[t * N + n];
            }
    simd::exp(abar.data(), abar.data(), abar.size());
    return {Tensor<T>(Shape{L, C, N}, std::move(abar)), Tensor<T>(Shape{L, C, N}, std::move(bbar))};
}

namespace {

template <typename T>
Tensor<T> scan_readout(const Tensor<T>& abar, const Tensor<T>& bbar, const Tensor<T>& x,
                       const Tensor<T>& C_t, const Tensor<T>& D, bool parallel, std::size_t chunk) {
    if (chunk == 0) throw std::invalid_argument("scan chunk must be positive");
    require(abar.dim() == 3 && bbar.shape() == abar.shape(),
            "scan expects abar and bbar of equal shape [L, C, N], got " + shape_str(abar.shape()) +
                " and " + shape_str(bbar.shape()));
    const std::size_t L = abar.size(0);
    const std::size_t C = abar.size(1);
    const std::size_t N = abar.size(2);
    require(x.dim() == 2 && x.size(0) == L && x.size(1) == C,
            "scan input x " + shape_str(x.shape()) + " does not match length " + std::to_string(L) +
                " and width " + std::to_string(C));
    require(C_t.dim() == 2 && C_t.size(0) == L && C_t.size(1) == N,
            "scan readout C_t " + shape_str(C_t.shape()) + " does not match [L, N] = [" +
                std::to_string(L) + ", " + std::to_string(N) + "]");
    require(D.dim() == 1 && D.size(0) == C, "scan skip D " + shape_str(D.shape()) +
                                                " does not match width " + std::to_string(C));
    const std::size_t lanes = C * N;
    const auto xv = x.data();
    const auto bb = bbar.data();
    std::vector<T> bx(L * lanes);
    for (std::size_t t = 0; t < L; ++t)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t n = 0; n < N; ++n) {
                const std::size_t i = (t * C + c) * N + n;
                bx[i] = bb[i] * xv[t * C + c];
            }
    std::vector<T> h(L * lanes);
    simd::RecurrenceView<T> v{abar.data().data(), bx.data(), h.data(),
                              static_cast<std::ptrdiff_t>(lanes), L, lanes};
    linear_scan(v, parallel, chunk);
    const auto cv = C_t.data();
    const auto dv = D.data();
    std::vector<T> y(L * C);
    for (std::size_t t = 0; t < L; ++t)
        for (std::size_t c = 0; c < C; ++c) {
            T acc = T(0);
            const T* hr = h.data() + (t * C + c) * N;
            for (std::size_t n = 0; n < N; ++n) acc += cv[t * N + n] * hr[n];
            y[t * C + c] = acc + dv[c] * xv[t * C + c];
        }
    return Tensor<T>(Shape{L, C}, std::move(y));
}

}  // namespace

template <typename T>
Tensor<T> scan_sequential(const Tensor<T>& abar, const Tensor<T>& bbar, const Tensor<T>& x,
                          const Tensor<T>& C_t, const Tensor<T>& D) {
    return scan_readout(abar, bbar, x, C_t, D, false, kDefaultChunk);
}

template <typename T>
Tensor<T> scan_parallel(const Tensor<T>& abar, const Tensor<T>& bbar, const Tensor<T>& x,
                        const Tensor<T>& C_t, const Tensor<T>& D, std::size_t chunk) {
    return scan_readout(abar, bbar, x, C_t, D, true, chunk);
}

template <typename T>
Selection<T> select_params(const Tensor<T>& x, const SsmParams<T>& p) {
    const std::size_t f = p.dt_w.size(0);
    require(x.dim() >= 1 && x.shape().back() == f,
            "select_params input width " + std::to_string(x.dim() ? x.shape().back() : 0) +
                " does not match projection width " + std::to_string(f));
    return {ops::softplus(ops::linear(x, p.dt_w, p.dt_bias)), ops::linear(x, p.b_w, p.b_bias),
            ops::linear(x, p.c_w, p.c_bias)};
}

template <typename T>
Tensor<T> state_matrix(const SsmParams<T>& p) {
    return ops::neg(ops::exp(p.a_log));
}

template <typename T>
Tensor<T> selective_scan(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& A,
                         const Tensor<T>& B_t, const Tensor<T>& C_t, const Tensor<T>& D,
                         ScanOptions options) {
    require(u.dim() == 3, "selective_scan expects u[B, L, C], got " + shape_str(u.shape()));
    const std::size_t nb = u.size(0);
    const std::size_t L = u.size(1);
    const std::size_t C = u.size(2);
    require(A.dim() == 2 && A.size(0) == C,
            "selective_scan A " + shape_str(A.shape()) + " does not match width " + std::to_string(C));
    const std::size_t N = A.size(1);
    require(delta.shape() == u.shape(), "selective_scan delta " + shape_str(delta.shape()) +
                                            " does not match u " + shape_str(u.shape()));
    const Shape bn{nb, L, N};
    require(B_t.shape() == bn && C_t.shape() == bn,
            "selective_scan B_t/C_t must be " + shape_str(bn) + ", got " + shape_str(B_t.shape()) +
                " and " + shape_str(C_t.shape()));
    require(D.dim() == 1 && D.size(0) == C, "selective_scan D " + shape_str(D.shape()) +
                                                " does not match width " + std::to_string(C));
    if (options.chunk == 0) throw std::invalid_argument("scan chunk must be positive");

    const std::size_t lanes = C * N;
    const std::size_t per_item = L * lanes;
    const auto uv = u.data();
    const auto dlt = delta.data();
    const auto av = A.data();
    const auto bv = B_t.data();
    const auto cv = C_t.data();
    const auto dv = D.data();

    auto abar = std::make_shared<std::vector<T>>(nb * per_item);
    auto h = std::make_shared<std::vector<T>>(nb * per_item);
    std::vector<T> bx(per_item);
    std::vector<T> y(nb * L * C);
    for (std::size_t b = 0; b < nb; ++b) {
        T* ab = abar->data() + b * per_item;
        T* hb = h->data() + b * per_item;
        for (std::size_t t = 0; t < L; ++t) {
            const std::size_t row = b * L + t;
            for (std::size_t c = 0; c < C; ++c) {
                const T dl = dlt[row * C + c];
                const T du = dl * uv[row * C + c];
                T* ar = ab + (t * C + c) * N;
                T* br = bx.data() + (t * C + c) * N;
                for (std::size_t n = 0; n < N; ++n) {
                    ar[n] = dl * av[c * N + n];
                    br[n] = du * bv[row * N + n];
                }
            }
        }
        simd::exp(ab, ab, per_item);
        simd::RecurrenceView<T> v{ab, bx.data(), hb, static_cast<std::ptrdiff_t>(lanes), L, lanes};
        linear_scan(v, options.parallel, options.chunk);
        for (std::size_t t = 0; t < L; ++t) {
            const std::size_t row = b * L + t;
            for (std::size_t c = 0; c < C; ++c) {
                const T* hr = hb + (t * C + c) * N;
                T acc = T(0);
                for (std::size_t n = 0; n < N; ++n) acc += cv[row * N + n] * hr[n];
                y[row * C + c] = acc + dv[c] * uv[row * C + c];
            }
        }
    }
    Tensor<T> out(u.shape(), std::move(y));
    if (!detail::needs_graph<T>({&u, &delta, &A, &B_t, &C_t, &D})) return out;

    auto ui = u.impl();
    auto di = delta.impl();
    auto ai = A.impl();
    auto bi = B_t.impl();
    auto ci = C_t.impl();
    auto ski = D.impl();
    detail::attach<T>(out, "selective_scan", {ui, di, ai, bi, ci, ski},
                      [=](std::span<const T> dy) {
        const auto& uv = ui->data;
        const auto& dlt = di->data;
        const auto& av = ai->data;
        const auto& bv = bi->data;
        const auto& cv = ci->data;
        const auto& dv = ski->data;
        std::vector<T> gu(nb * L * C, T(0));
        std::vector<T> gdelta(nb * L * C, T(0));
        std::vector<T> gA(C * N, T(0));
        std::vector<T> gB(nb * L * N, T(0));
        std::vector<T> gC(nb * L * N, T(0));
        std::vector<T> gD(C, T(0));
        std::vector<T> rhs(per_item);
        std::vector<T> ashift(per_item);
        std::vector<T> g(per_item);
        for (std::size_t b = 0; b < nb; ++b) {
            const T* ab = abar->data() + b * per_item;
            const T* hb = h->data() + b * per_item;
            for (std::size_t t = 0; t < L; ++t) {
                const std::size_t row = b * L + t;
                for (std::size_t c = 0; c < C; ++c) {
                    const T dyv = dy[row * C + c];
                    T* rr = rhs.data() + (t * C + c) * N;
                    for (std::size_t n = 0; n < N; ++n) rr[n] = cv[row * N + n] * dyv;
                }
            }
            std::copy(ab + lanes, ab + per_item, ashift.begin());
            std::fill(ashift.end() - static_cast<std::ptrdiff_t>(lanes), ashift.end(), T(0));
            const std::size_t last = (L - 1) * lanes;
            simd::RecurrenceView<T> v{ashift.data() + last, rhs.data() + last, g.data() + last,
                                      -static_cast<std::ptrdiff_t>(lanes), L, lanes};
            linear_scan(v, options.parallel, options.chunk);
            for (std::size_t t = 0; t < L; ++t) {
                const std::size_t row = b * L + t;
                for (std::size_t c = 0; c < C; ++c) {
                    const std::size_t base = (t * C + c) * N;
                    const T dl = dlt[row * C + c];
                    const T uu = uv[row * C + c];
                    const T dyv = dy[row * C + c];
                    T acc_delta = T(0);
                    T acc_u = T(0);
                    for (std::size_t n = 0; n < N; ++n) {
                        const T gg = g[base + n];
                        const T hprev = t > 0 ? hb[base + n - lanes] : T(0);
                        const T da = gg * hprev * ab[base + n];
                        const T bn_ = bv[row * N + n];
                        acc_delta += da * av[c * N + n] + gg * bn_ * uu;
                        gA[c * N + n] += da * dl;
                        gB[row * N + n] += gg * dl * uu;
                        acc_u += gg * dl * bn_;
                        gC[row * N + n] += dyv * hb[base + n];
                    }
                    gdelta[row * C + c] += acc_delta;
                    gu[row * C + c] += acc_u + dv[c] * dyv;
                    gD[c] += dyv * uu;
                }
            }
        }
        if (ui->requires_grad) ui->accumulate(gu);
        if (di->requires_grad) di->accumulate(gdelta);
        if (ai->requires_grad) ai->accumulate(gA);
        if (bi->requires_grad) bi->accumulate(gB);
        if (ci->requires_grad) ci->accumulate(gC);
        if (ski->requires_grad) ski->accumulate(gD);
    });
    return out;
}

template <typename T>
SelectiveSsm<T>::SelectiveSsm(const SelectiveSsmConfig& config, InitRng& rng) : config_(config) {
    const std::size_t F = config.width;
    const std::size_t N = config.state_size;
    const std::size_t K = config.conv_width;
    if (F == 0 || N == 0 || K == 0 || config.expansion == 0) {
        throw std::invalid_argument("selective SSM width, state size, expansion and conv width must be positive");
    }
    const std::size_t D = inner_width();
    in_x_w = this->add_param("in_x.weight", fan_in_uniform<T>({F, D}, F, rng), true);
    in_x_b = this->add_param("in_x.bias", Tensor<T>({D}), false);
    in_z_w = this->add_param("in_z.weight", fan_in_uniform<T>({F, D}, F, rng), true);
    in_z_b = this->add_param("in_z.bias", Tensor<T>({D}), false);
    conv_w = this->add_param("conv.weight", fan_in_uniform<T>({K, D}, K, rng), true);
    conv_b = this->add_param("conv.bias", Tensor<T>({D}), false);
    ssm_.b_w = this->add_param("proj_b.weight", fan_in_uniform<T>({D, N}, D, rng), true);
    ssm_.b_bias = this->add_param("proj_b.bias", Tensor<T>({N}), false);
    ssm_.c_w = this->add_param("proj_c.weight", fan_in_uniform<T>({D, N}, D, rng), true);
    ssm_.c_bias = this->add_param("proj_c.bias", Tensor<T>({N}), false);
    ssm_.dt_w = this->add_param("proj_dt.weight", fan_in_uniform<T>({D, D}, D, rng), true);
    // Bias = softplus^-1(dt) with dt log-uniform in [1e-3, 1e-1].
    Tensor<T> dt_bias({D});
    for (T& v : dt_bias.mutable_data()) {
        const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
        v = static_cast<T>(dt + std::log(-std::expm1(-dt)));
    }
    ssm_.dt_bias = this->add_param("proj_dt.bias", dt_bias, false);
    Tensor<T> a_log({D, N});
    for (std::size_t c = 0; c < D; ++c)
        for (std::size_t n = 0; n < N; ++n)
            a_log.mutable_data()[c * N + n] = static_cast<T>(std::log(static_cast<double>(n + 1)));
    ssm_.a_log = this->add_param("a_log", a_log, false);
    ssm_.d_skip = this->add_param("d_skip", Tensor<T>({D}, T(1)), false);
    out_w = this->add_param("out.weight", fan_in_uniform<T>({D, F}, D, rng), true);
    out_b = this->add_param("out.bias", Tensor<T>({F}), false);
}

template <typename T>
Tensor<T> SelectiveSsm<T>::forward(const Tensor<T>& x) const {
    require(x.dim() == 3 && x.size(2) == config_.width,
            "selective SSM expects x[B, L, " + std::to_string(config_.width) + "], got " +
                shape_str(x.shape()));
    const Tensor<T> u = ops::silu(ops::causal_conv1d(ops::linear(x, in_x_w, in_x_b), conv_w, conv_b));
    const Tensor<T> gate = ops::silu(ops::linear(x, in_z_w, in_z_b));
    const Selection<T> sel = select_params(u, ssm_);
    const Tensor<T> y =
        selective_scan(u, sel.delta, state_matrix(ssm_), sel.B_t, sel.C_t, ssm_.d_skip, scan_);
    return ops::linear(ops::mul(y, gate), out_w, out_b);
}

std::size_t selective_ssm_param_count(const SelectiveSsmConfig& config) {
    const std::size_t F = config.width;
    const std::size_t D = F * config.expansion;
    const std::size_t N = config.state_size;
    const std::size_t K = config.conv_width;
    return 2 * (F * D + D)      // in_x, in_z
           + (K * D + D)        // causal conv
           + 2 * (D * N + N)    // proj_b, proj_c
           + (D * D + D)        // proj_dt
           + D * N + D          // a_log, d_skip
           + (D * F + F);       // out
}

#define CUMAMBA_INSTANTIATE_SSM(T)                                                                \
    template void linear_scan<T>(const simd::RecurrenceView<T>&, bool, std::size_t);              \
    template void blelloch_exclusive<T>(T*, T*, std::size_t, std::size_t);                        \
    template Discretized<T> discretize<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);  \
    template Tensor<T> scan_sequential<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                          const Tensor<T>&, const Tensor<T>&);                    \
    template Tensor<T> scan_parallel<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                        const Tensor<T>&, const Tensor<T>&, std::size_t);         \
    template Selection<T> select_params<T>(const Tensor<T>&, const SsmParams<T>&);                \
    template Tensor<T> state_matrix<T>(const SsmParams<T>&);                                      \
    template Tensor<T> selective_scan<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                         const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                         ScanOptions);                                            \
    template class SelectiveSsm<T>;

CUMAMBA_INSTANTIATE_SSM(float)
CUMAMBA_INSTANTIATE_SSM(double)

}  // namespace cumamba::ssm
