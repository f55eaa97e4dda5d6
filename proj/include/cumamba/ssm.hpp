#pragma once

#include <cstddef>

#include "cumamba/module.hpp"
#include "cumamba/simd/kernels.hpp"
#include "cumamba/tensor.hpp"

namespace cumamba::ssm {

inline constexpr std::size_t kDefaultStateSize = 16;
inline constexpr std::size_t kDefaultExpansion = 2;
inline constexpr std::size_t kDefaultConvWidth = 4;
inline constexpr std::size_t kDefaultChunk = 64;

/// h_t = a_t * h_{t-1} + b_t from h_{-1} = 0 for every lane, writing v.h.
/// With `parallel`, rows are split into chunks of `chunk` steps: each chunk is
/// folded into one scan element, the chunk elements are prefix-combined by an
/// up-sweep/down-sweep tree, and every chunk is then rescanned from its
/// carry-in. Without it the rows are walked once in order.
template <typename T>
void linear_scan(const simd::RecurrenceView<T>& v, bool parallel, std::size_t chunk);

/// Exclusive prefix combination of n scan elements stored as [n, lanes]
/// arrays, in place: element k becomes the composition of elements 0..k-1,
/// with the identity (a = 1, b = 0) at k = 0.
template <typename T>
void blelloch_exclusive(T* a, T* b, std::size_t n, std::size_t lanes);

template <typename T>
struct Discretized {
    Tensor<T> abar;  // [L, C, N]
    Tensor<T> bbar;  // [L, C, N]
};

/// abar = exp(delta * A), bbar = delta * B_t. Throws std::domain_error on a
/// non-positive delta.
template <typename T>
Discretized<T> discretize(const Tensor<T>& delta, const Tensor<T>& A, const Tensor<T>& B_t);

/// y[t, c] = sum_n C_t[t, n] h[t, c, n] + D[c] x[t, c] with
/// h[t, c, n] = abar[t, c, n] h[t-1, c, n] + bbar[t, c, n] x[t, c].
template <typename T>
Tensor<T> scan_sequential(const Tensor<T>& abar, const Tensor<T>& bbar, const Tensor<T>& x,
                          const Tensor<T>& C_t, const Tensor<T>& D);

/// Same contract as scan_sequential, computed by the chunked tree scan.
template <typename T>
Tensor<T> scan_parallel(const Tensor<T>& abar, const Tensor<T>& bbar, const Tensor<T>& x,
                        const Tensor<T>& C_t, const Tensor<T>& D, std::size_t chunk);

/// Per-layer selective-SSM parameters: A = -exp(a_log) keeps every entry of
/// A negative under unconstrained updates.
template <typename T>
struct SsmParams {
    Tensor<T> a_log;    // [C, N]
    Tensor<T> b_w;      // [F, N]
    Tensor<T> b_bias;   // [N]
    Tensor<T> c_w;      // [F, N]
    Tensor<T> c_bias;   // [N]
    Tensor<T> dt_w;     // [F, C]
    Tensor<T> dt_bias;  // [C]
    Tensor<T> d_skip;   // [C]
};

template <typename T>
struct Selection {
    Tensor<T> delta;  // [..., C], strictly positive
    Tensor<T> B_t;    // [..., N]
    Tensor<T> C_t;    // [..., N]
};

/// Data-dependent projections of x[..., F].
template <typename T>
Selection<T> select_params(const Tensor<T>& x, const SsmParams<T>& p);

template <typename T>
Tensor<T> state_matrix(const SsmParams<T>& p);

struct ScanOptions {
    bool parallel = true;
    std::size_t chunk = kDefaultChunk;
};

/// Differentiable fused selective scan over a batch. u, delta: [B, L, C];
/// A: [C, N]; B_t, C_t: [B, L, N]; D: [C]. The backward pass runs the adjoint
/// recurrence g_t = C_t dy_t + abar_{t+1} g_{t+1} as a reverse-direction scan.
template <typename T>
Tensor<T> selective_scan(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& A,
                         const Tensor<T>& B_t, const Tensor<T>& C_t, const Tensor<T>& D,
                         ScanOptions options = {});

struct SelectiveSsmConfig {
    std::size_t width = 0;  // F
    std::size_t state_size = kDefaultStateSize;
    std::size_t expansion = kDefaultExpansion;
    std::size_t conv_width = kDefaultConvWidth;
};

/// Gated selective-SSM block on x[B, L, F]:
///   u = silu(causal_conv(in_x(x))), gate = silu(in_z(x)),
///   out = out_proj(selective_scan(u, ...) * gate).
template <typename T>
class SelectiveSsm : public Module<T> {
public:
    SelectiveSsm(const SelectiveSsmConfig& config, InitRng& rng);

    Tensor<T> forward(const Tensor<T>& x) const;

    const SelectiveSsmConfig& config() const { return config_; }
    std::size_t inner_width() const { return config_.width * config_.expansion; }
    const SsmParams<T>& ssm_params() const { return ssm_; }
    ScanOptions& scan_options() { return scan_; }

    Tensor<T> in_x_w, in_x_b, in_z_w, in_z_b, conv_w, conv_b, out_w, out_b;

private:
    SelectiveSsmConfig config_;
    SsmParams<T> ssm_;
    ScanOptions scan_;
};

/// Parameter count of one SelectiveSsm, computed from its configuration.
std::size_t selective_ssm_param_count(const SelectiveSsmConfig& config);

}  // namespace cumamba::ssm
