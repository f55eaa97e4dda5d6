#include "cumamba/simd/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <type_traits>
#include <vector>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace cumamba::simd {

namespace scalar {

template <typename T>
void exp(const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
}

template void exp<float>(const float*, float*, std::size_t);
template void exp<double>(const double*, double*, std::size_t);

}  // namespace scalar

void adamw(float* w, float* m, float* v, const float* g, std::size_t n, const AdamCoeffs& k) {
    switch (active_isa()) {
#if defined(CUMAMBA_HAVE_AVX2)
        case Isa::kAvx2: return avx2::adamw(w, m, v, g, n, k);
#endif
#if defined(CUMAMBA_HAVE_NEON)
        case Isa::kNeon: return neon::adamw(w, m, v, g, n, k);
#endif
        default: break;
    }
    scalar::adamw(w, m, v, g, n, k);
}

template <typename T>
void recurrence(const RecurrenceView<T>& v, T* state) {
    switch (active_isa()) {
#if defined(CUMAMBA_HAVE_AVX2)
        case Isa::kAvx2: return avx2::recurrence(v, state);
#endif
#if defined(CUMAMBA_HAVE_NEON)
        case Isa::kNeon:
            if constexpr (std::is_same_v<T, float>) return neon::recurrence(v, state);
            break;
#endif
        default: break;
    }
    scalar::recurrence(v, state);
}

template <typename T>
void aggregate(const RecurrenceView<T>& v, T* prod_a, T* sum_b) {
    switch (active_isa()) {
#if defined(CUMAMBA_HAVE_AVX2)
        case Isa::kAvx2: return avx2::aggregate(v, prod_a, sum_b);
#endif
#if defined(CUMAMBA_HAVE_NEON)
        case Isa::kNeon:
            if constexpr (std::is_same_v<T, float>) return neon::aggregate(v, prod_a, sum_b);
            break;
#endif
        default: break;
    }
    scalar::aggregate(v, prod_a, sum_b);
}

template <typename T>
void compose(const T* fa, const T* fb, const T* sa, const T* sb, T* oa, T* ob, std::size_t lanes) {
    switch (active_isa()) {
#if defined(CUMAMBA_HAVE_AVX2)
        case Isa::kAvx2: return avx2::compose(fa, fb, sa, sb, oa, ob, lanes);
#endif
#if defined(CUMAMBA_HAVE_NEON)
        case Isa::kNeon:
            if constexpr (std::is_same_v<T, float>) return neon::compose(fa, fb, sa, sb, oa, ob, lanes);
            break;
#endif
        default: break;
    }
    scalar::compose(fa, fb, sa, sb, oa, ob, lanes);
}

template <typename T>
void exp(const T* x, T* y, std::size_t n) {
#if defined(CUMAMBA_HAVE_AVX2)
    if constexpr (std::is_same_v<T, float>) {
        if (active_isa() == Isa::kAvx2) return avx2::exp(x, y, n);
    }
#endif
    scalar::exp(x, y, n);
}

namespace {

constexpr std::size_t kMr = 6;
constexpr std::size_t kNr = 16;
constexpr std::size_t kKc = 256;
constexpr std::size_t kNc = 256;
constexpr std::size_t kNtBlock = 4;

template <typename T>
std::vector<T>& scratch(int slot) {
    thread_local std::vector<T> buffers[2];
    return buffers[slot];
}

// Packs rows [0, m) x cols [p0, p0 + kc) of op(A) into kMr-row panels, k-major.
template <typename T>
void pack_a(bool trans_a, const T* a, std::size_t lda, std::size_t m, std::size_t p0,
            std::size_t kc, T* out) {
    const std::size_t panels = (m + kMr - 1) / kMr;
    for (std::size_t p = 0; p < panels; ++p) {
        T* dst = out + p * kMr * kc;
        const std::size_t i0 = p * kMr;
        for (std::size_t k = 0; k < kc; ++k) {
            for (std::size_t r = 0; r < kMr; ++r) {
                const std::size_t i = i0 + r;
                T v = T(0);
                if (i < m) v = trans_a ? a[(p0 + k) * lda + i] : a[i * lda + p0 + k];
                dst[k * kMr + r] = v;
            }
        }
    }
}

template <typename T>
void gemm_nn(bool trans_a, std::size_t m, std::size_t n, std::size_t k, const T* a,
             std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc) {
    const std::size_t panels = (m + kMr - 1) / kMr;
    auto& packed = scratch<T>(0);
    const bool vec = std::is_same_v<T, float> && active_isa() == Isa::kAvx2;
    (void)vec;
    for (std::size_t p0 = 0; p0 < k; p0 += kKc) {
        const std::size_t kc = std::min(kKc, k - p0);
        packed.resize(panels * kMr * kc);
        pack_a(trans_a, a, lda, m, p0, kc, packed.data());
        const T* bblock = b + p0 * ldb;
        const T* pk = packed.data();
        // Column blocks keep the kc x kNc slice of B cache-resident across panels.
        for (std::size_t jb = 0; jb < n; jb += kNc) {
            const std::size_t jend = std::min(n, jb + kNc);
#if defined(_OPENMP)
#pragma omp parallel for schedule(static) if (panels * (jend - jb) * kc > (1u << 16))
#endif
            for (std::ptrdiff_t pi = 0; pi < static_cast<std::ptrdiff_t>(panels); ++pi) {
                const std::size_t p = static_cast<std::size_t>(pi);
                const std::size_t i0 = p * kMr;
                const std::size_t mr = std::min(kMr, m - i0);
                const T* panel = pk + p * kMr * kc;
                for (std::size_t j0 = jb; j0 < jend; j0 += kNr) {
                    const std::size_t nr = std::min(kNr, jend - j0);
                    T* ctile = c + i0 * ldc + j0;
#if defined(CUMAMBA_HAVE_AVX2)
                    if constexpr (std::is_same_v<T, float>) {
                        if (vec && nr == kNr) {
                            if (mr == kMr) {
                                avx2::gemm_nn_6x16(kc, panel, bblock + j0, ldb, ctile, ldc);
                                continue;
                            }
                            // Short panel: zero-padded rows go to a scratch tile.
                            float tile[kMr * kNr] = {};
                            avx2::gemm_nn_6x16(kc, panel, bblock + j0, ldb, tile, kNr);
                            for (std::size_t r = 0; r < mr; ++r)
                                for (std::size_t j = 0; j < kNr; ++j) ctile[r * ldc + j] += tile[r * kNr + j];
                            continue;
                        }
                    }
#endif
                    scalar::gemm_nn_tile(mr, nr, kc, panel, kMr, bblock + j0, ldb, ctile, ldc);
                }
            }
        }
    }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
             std::size_t ldb, T* c, std::size_t ldc) {
    const bool vec = std::is_same_v<T, float> && active_isa() == Isa::kAvx2;
    (void)vec;
    const std::size_t blocks = (m + kNtBlock - 1) / kNtBlock;
#if defined(_OPENMP)
#pragma omp parallel for schedule(static) if (m * n * k > (1u << 16))
#endif
    for (std::ptrdiff_t bi = 0; bi < static_cast<std::ptrdiff_t>(blocks); ++bi) {
        const std::size_t i0 = static_cast<std::size_t>(bi) * kNtBlock;
        const std::size_t mr = std::min(kNtBlock, m - i0);
        for (std::size_t j0 = 0; j0 < n; j0 += kNtBlock) {
            const std::size_t nr = std::min(kNtBlock, n - j0);
            T* ctile = c + i0 * ldc + j0;
#if defined(CUMAMBA_HAVE_AVX2)
            if constexpr (std::is_same_v<T, float>) {
                if (vec && mr == kNtBlock && nr == kNtBlock) {
                    avx2::gemm_nt_4x4(k, a + i0 * lda, lda, b + j0 * ldb, ldb, ctile, ldc);
                    continue;
                }
            }
#endif
            scalar::gemm_nt_tile(mr, nr, k, a + i0 * lda, lda, b + j0 * ldb, ldb, ctile, ldc);
        }
    }
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
    if (!accumulate) {
        for (std::size_t i = 0; i < m; ++i) std::fill_n(c + i * ldc, n, T(0));
    }
    if (m == 0 || n == 0 || k == 0) return;
    if (!trans_b) {
        gemm_nn(trans_a, m, n, k, a, lda, b, ldb, c, ldc);
        return;
    }
    if (!trans_a) {
        gemm_nt(m, n, k, a, lda, b, ldb, c, ldc);
        return;
    }
    // Both transposed: materialize op(A) row-major first.
    auto& at = scratch<T>(1);
    at.resize(m * k);
    for (std::size_t p = 0; p < k; ++p)
        for (std::size_t i = 0; i < m; ++i) at[i * k + p] = a[p * lda + i];
    gemm_nt(m, n, k, at.data(), k, b, ldb, c, ldc);
}

template void recurrence<float>(const RecurrenceView<float>&, float*);
template void recurrence<double>(const RecurrenceView<double>&, double*);
template void aggregate<float>(const RecurrenceView<float>&, float*, float*);
template void aggregate<double>(const RecurrenceView<double>&, double*, double*);
template void compose<float>(const float*, const float*, const float*, const float*, float*,
                             float*, std::size_t);
template void compose<double>(const double*, const double*, const double*, const double*,
                              double*, double*, std::size_t);
template void exp<float>(const float*, float*, std::size_t);
template void exp<double>(const double*, double*, std::size_t);
template void gemm<float>(bool, bool, std::size_t, std::size_t, std::size_t, const float*,
                          std::size_t, const float*, std::size_t, float*, std::size_t, bool);
template void gemm<double>(bool, bool, std::size_t, std::size_t, std::size_t, const double*,
                           std::size_t, const double*, std::size_t, double*, std::size_t, bool);

}  // namespace cumamba::simd
