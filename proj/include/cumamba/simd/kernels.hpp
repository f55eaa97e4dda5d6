#pragma once

// Data-parallel inner loops. Every kernel has a portable scalar reference
// (templated, usable for float and double) and ISA variants compiled in
// separate translation units; the public entry points at the bottom pick the
// variant from simd::active_isa() at call time.

#include <cmath>
#include <cstddef>

#include "cumamba/simd/dispatch.hpp"

namespace cumamba::simd {

/// A first-order linear recurrence over `steps` rows of `lanes` contiguous
/// values: h_t = a_t * h_{t-1} + b_t. Row t of a, b and h starts at
/// `base + t * stride`; a negative stride walks the rows backwards.
template <typename T>
struct RecurrenceView {
    const T* a = nullptr;
    const T* b = nullptr;
    T* h = nullptr;  // optional per-step state output
    std::ptrdiff_t stride = 0;
    std::size_t steps = 0;
    std::size_t lanes = 0;
};

/// Per-step constants of the decoupled-weight-decay Adam update.
struct AdamCoeffs {
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float inv_bias1 = 1.0f;  // 1 / (1 - beta1^t)
    float inv_bias2 = 1.0f;  // 1 / (1 - beta2^t)
    float lr = 0.0f;
    float eps = 1e-8f;
    float decay = 1.0f;  // 1 - lr * weight_decay, or 1 when not decayed
};

namespace scalar {

/// m = b1 m + (1 - b1) g; v = b2 v + (1 - b2) g^2;
/// w = w decay - lr (m / c1) / (sqrt(v / c2) + eps).
inline void adamw(float* w, float* m, float* v, const float* g, std::size_t n, const AdamCoeffs& k) {
    const float om1 = 1.0f - k.beta1;
    const float om2 = 1.0f - k.beta2;
    for (std::size_t i = 0; i < n; ++i) {
        const float mi = k.beta1 * m[i] + om1 * g[i];
        const float vi = k.beta2 * v[i] + om2 * (g[i] * g[i]);
        m[i] = mi;
        v[i] = vi;
        const float step = (mi * k.inv_bias1) / (std::sqrt(vi * k.inv_bias2) + k.eps);
        w[i] = w[i] * k.decay - k.lr * step;
    }
}

/// `state` holds h_{-1} on entry and the last state on exit.
template <typename T>
void recurrence(const RecurrenceView<T>& v, T* state) {
    for (std::size_t t = 0; t < v.steps; ++t) {
        const std::ptrdiff_t row = static_cast<std::ptrdiff_t>(t) * v.stride;
        const T* a = v.a + row;
        const T* b = v.b + row;
        for (std::size_t l = 0; l < v.lanes; ++l) state[l] = a[l] * state[l] + b[l];
        if (v.h != nullptr) {
            T* h = v.h + row;
            for (std::size_t l = 0; l < v.lanes; ++l) h[l] = state[l];
        }
    }
}

/// Folds a block of steps into one scan element: prod_a = a_{n-1}...a_0 and
/// sum_b = the block's final state from a zero start.
template <typename T>
void aggregate(const RecurrenceView<T>& v, T* prod_a, T* sum_b) {
    for (std::size_t l = 0; l < v.lanes; ++l) {
        prod_a[l] = T(1);
        sum_b[l] = T(0);
    }
    for (std::size_t t = 0; t < v.steps; ++t) {
        const std::ptrdiff_t row = static_cast<std::ptrdiff_t>(t) * v.stride;
        const T* a = v.a + row;
        const T* b = v.b + row;
        for (std::size_t l = 0; l < v.lanes; ++l) {
            prod_a[l] *= a[l];
            sum_b[l] = a[l] * sum_b[l] + b[l];
        }
    }
}

/// (out_a, out_b) = second o first = (first_a * second_a, second_a * first_b + second_b).
/// Outputs may alias either input.
template <typename T>
void compose(const T* first_a, const T* first_b, const T* second_a, const T* second_b, T* out_a,
             T* out_b, std::size_t lanes) {
    for (std::size_t l = 0; l < lanes; ++l) {
        const T fa = first_a[l];
        const T fb = first_b[l];
        const T sa = second_a[l];
        const T sb = second_b[l];
        out_a[l] = fa * sa;
        out_b[l] = sa * fb + sb;
    }
}

template <typename T>
void exp(const T* x, T* y, std::size_t n);

/// C[M x N] += A[M x K] * B[K x N]; A is given as MR-row panels packed k-major
/// by the caller, B row-major with leading dimension ldb.
template <typename T>
void gemm_nn_tile(std::size_t mr, std::size_t nr, std::size_t kc, const T* a_panel,
                  std::size_t panel_rows, const T* b, std::size_t ldb, T* c, std::size_t ldc) {
    T acc[8][32] = {};
    for (std::size_t k = 0; k < kc; ++k) {
        const T* brow = b + k * ldb;
        const T* acol = a_panel + k * panel_rows;
        for (std::size_t r = 0; r < mr; ++r) {
            const T av = acol[r];
            for (std::size_t j = 0; j < nr; ++j) acc[r][j] += av * brow[j];
        }
    }
    for (std::size_t r = 0; r < mr; ++r)
        for (std::size_t j = 0; j < nr; ++j) c[r * ldc + j] += acc[r][j];
}

/// C[mr x nr] += A[mr x K] * B[nr x K]^T with both operands row-major along K.
template <typename T>
void gemm_nt_tile(std::size_t mr, std::size_t nr, std::size_t k, const T* a, std::size_t lda,
                  const T* b, std::size_t ldb, T* c, std::size_t ldc) {
    for (std::size_t i = 0; i < mr; ++i) {
        for (std::size_t j = 0; j < nr; ++j) {
            T acc = T(0);
            const T* ar = a + i * lda;
            const T* br = b + j * ldb;
            for (std::size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
            c[i * ldc + j] += acc;
        }
    }
}

}  // namespace scalar

#if defined(CUMAMBA_HAVE_AVX2)
namespace avx2 {
void recurrence(const RecurrenceView<float>& v, float* state);
void recurrence(const RecurrenceView<double>& v, double* state);
void aggregate(const RecurrenceView<float>& v, float* prod_a, float* sum_b);
void aggregate(const RecurrenceView<double>& v, double* prod_a, double* sum_b);
void compose(const float* fa, const float* fb, const float* sa, const float* sb, float* oa,
             float* ob, std::size_t lanes);
void compose(const double* fa, const double* fb, const double* sa, const double* sb, double* oa,
             double* ob, std::size_t lanes);
void exp(const float* x, float* y, std::size_t n);
// 6 x 16 register tile, A packed in 6-row panels.
void gemm_nn_6x16(std::size_t kc, const float* a_panel, const float* b, std::size_t ldb, float* c,
                  std::size_t ldc);
// 4 x 4 tile of dot products along K.
void gemm_nt_4x4(std::size_t k, const float* a, std::size_t lda, const float* b, std::size_t ldb,
                 float* c, std::size_t ldc);
void adamw(float* w, float* m, float* v, const float* g, std::size_t n, const AdamCoeffs& k);
}  // namespace avx2
#endif

#if defined(CUMAMBA_HAVE_NEON)
namespace neon {
void recurrence(const RecurrenceView<float>& v, float* state);
void aggregate(const RecurrenceView<float>& v, float* prod_a, float* sum_b);
void compose(const float* fa, const float* fb, const float* sa, const float* sb, float* oa,
             float* ob, std::size_t lanes);
void adamw(float* w, float* m, float* v, const float* g, std::size_t n, const AdamCoeffs& k);
}  // namespace neon
#endif

// Dispatching entry points.
template <typename T>
void recurrence(const RecurrenceView<T>& v, T* state);
template <typename T>
void aggregate(const RecurrenceView<T>& v, T* prod_a, T* sum_b);
template <typename T>
void compose(const T* fa, const T* fb, const T* sa, const T* sb, T* oa, T* ob, std::size_t lanes);
template <typename T>
void exp(const T* x, T* y, std::size_t n);

void adamw(float* w, float* m, float* v, const float* g, std::size_t n, const AdamCoeffs& k);

/// General matrix product C = op(A) * op(B) (+ C when `accumulate`), row-major
/// storage; op transposes when the flag is set. Every output element is
/// reduced over K in the same order regardless of thread count.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);

}  // namespace cumamba::simd
