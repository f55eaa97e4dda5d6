// AVX2 + FMA variants. This translation unit is compiled with -mavx2 -mfma
// and must only be entered after simd::isa_available(Isa::kAvx2) is true.
// Keep it free of standard-library templates so no AVX2-compiled inline code
// leaks into the rest of the program through the linker.

#include <immintrin.h>

#include "cumamba/simd/kernels.hpp"

namespace cumamba::simd::avx2 {

namespace {

inline float hsum(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 shuf = _mm_movehdup_ps(lo);
    __m128 sums = _mm_add_ps(lo, shuf);
    shuf = _mm_movehl_ps(shuf, sums);
    sums = _mm_add_ss(sums, shuf);
    return _mm_cvtss_f32(sums);
}

template <typename T>
inline const T* row_ptr(const T* base, std::ptrdiff_t stride, std::size_t t) {
    return base + static_cast<std::ptrdiff_t>(t) * stride;
}

}  // namespace

void recurrence(const RecurrenceView<float>& v, float* state) {
    const std::size_t lanes = v.lanes;
    for (std::size_t t = 0; t < v.steps; ++t) {
        const float* a = row_ptr(v.a, v.stride, t);
        const float* b = row_ptr(v.b, v.stride, t);
        float* h = v.h != nullptr ? v.h + static_cast<std::ptrdiff_t>(t) * v.stride : nullptr;
        std::size_t l = 0;
        for (; l + 32 <= lanes; l += 32) {
            __m256 s0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + l), _mm256_loadu_ps(state + l),
                                        _mm256_loadu_ps(b + l));
            __m256 s1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + l + 8), _mm256_loadu_ps(state + l + 8),
                                        _mm256_loadu_ps(b + l + 8));
            __m256 s2 = _mm256_fmadd_ps(_mm256_loadu_ps(a + l + 16),
                                        _mm256_loadu_ps(state + l + 16), _mm256_loadu_ps(b + l + 16));
            __m256 s3 = _mm256_fmadd_ps(_mm256_loadu_ps(a + l + 24),
                                        _mm256_loadu_ps(state + l + 24), _mm256_loadu_ps(b + l + 24));
            _mm256_storeu_ps(state + l, s0);
            _mm256_storeu_ps(state + l + 8, s1);
            _mm256_storeu_ps(state + l + 16, s2);
            _mm256_storeu_ps(state + l + 24, s3);
            if (h != nullptr) {
                _mm256_storeu_ps(h + l, s0);
                _mm256_storeu_ps(h + l + 8, s1);
                _mm256_storeu_ps(h + l + 16, s2);
                _mm256_storeu_ps(h + l + 24, s3);
            }
        }
        for (; l + 8 <= lanes; l += 8) {
            __m256 s = _mm256_fmadd_ps(_mm256_loadu_ps(a + l), _mm256_loadu_ps(state + l),
                                       _mm256_loadu_ps(b + l));
            _mm256_storeu_ps(state + l, s);
            if (h != nullptr) _mm256_storeu_ps(h + l, s);
        }
        for (; l < lanes; ++l) {
            state[l] = a[l] * state[l] + b[l];
            if (h != nullptr) h[l] = state[l];
        }
    }
}

void recurrence(const RecurrenceView<double>& v, double* state) {
    const std::size_t lanes = v.lanes;
    for (std::size_t t = 0; t < v.steps; ++t) {
        const double* a = row_ptr(v.a, v.stride, t);
        const double* b = row_ptr(v.b, v.stride, t);
        double* h = v.h != nullptr ? v.h + static_cast<std::ptrdiff_t>(t) * v.stride : nullptr;
        std::size_t l = 0;
        for (; l + 8 <= lanes; l += 8) {
            __m256d s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + l), _mm256_loadu_pd(state + l),
                                         _mm256_loadu_pd(b + l));
            __m256d s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + l + 4), _mm256_loadu_pd(state + l + 4),
                                         _mm256_loadu_pd(b + l + 4));
            _mm256_storeu_pd(state + l, s0);
            _mm256_storeu_pd(state + l + 4, s1);
            if (h != nullptr) {
                _mm256_storeu_pd(h + l, s0);
                _mm256_storeu_pd(h + l + 4, s1);
            }
        }
        for (; l + 4 <= lanes; l += 4) {
            __m256d s = _mm256_fmadd_pd(_mm256_loadu_pd(a + l), _mm256_loadu_pd(state + l),
                                        _mm256_loadu_pd(b + l));
            _mm256_storeu_pd(state + l, s);
            if (h != nullptr) _mm256_storeu_pd(h + l, s);
        }
        for (; l < lanes; ++l) {
            state[l] = a[l] * state[l] + b[l];
            if (h != nullptr) h[l] = state[l];
        }
    }
}

void aggregate(const RecurrenceView<float>& v, float* prod_a, float* sum_b) {
    const std::size_t lanes = v.lanes;
    for (std::size_t l = 0; l < lanes; ++l) {
        prod_a[l] = 1.0f;
        sum_b[l] = 0.0f;
    }
    for (std::size_t t = 0; t < v.steps; ++t) {
        const float* a = row_ptr(v.a, v.stride, t);
        const float* b = row_ptr(v.b, v.stride, t);
        std::size_t l = 0;
        for (; l + 8 <= lanes; l += 8) {
            const __m256 av = _mm256_loadu_ps(a + l);
            _mm256_storeu_ps(prod_a + l, _mm256_mul_ps(_mm256_loadu_ps(prod_a + l), av));
            _mm256_storeu_ps(sum_b + l,
                             _mm256_fmadd_ps(av, _mm256_loadu_ps(sum_b + l), _mm256_loadu_ps(b + l)));
        }
        for (; l < lanes; ++l) {
            prod_a[l] *= a[l];
            sum_b[l] = a[l] * sum_b[l] + b[l];
        }
    }
}

void aggregate(const RecurrenceView<double>& v, double* prod_a, double* sum_b) {
    const std::size_t lanes = v.lanes;
    for (std::size_t l = 0; l < lanes; ++l) {
        prod_a[l] = 1.0;
        sum_b[l] = 0.0;
    }
    for (std::size_t t = 0; t < v.steps; ++t) {
        const double* a = row_ptr(v.a, v.stride, t);
        const double* b = row_ptr(v.b, v.stride, t);
        std::size_t l = 0;
        for (; l + 4 <= lanes; l += 4) {
            const __m256d av = _mm256_loadu_pd(a + l);
            _mm256_storeu_pd(prod_a + l, _mm256_mul_pd(_mm256_loadu_pd(prod_a + l), av));
            _mm256_storeu_pd(sum_b + l,
                             _mm256_fmadd_pd(av, _mm256_loadu_pd(sum_b + l), _mm256_loadu_pd(b + l)));
        }
        for (; l < lanes; ++l) {
            prod_a[l] *= a[l];
            sum_b[l] = a[l] * sum_b[l] + b[l];
        }
    }
}

void compose(const float* fa, const float* fb, const float* sa, const float* sb, float* oa,
             float* ob, std::size_t lanes) {
    std::size_t l = 0;
    for (; l + 8 <= lanes; l += 8) {
        const __m256 a1 = _mm256_loadu_ps(fa + l);
        const __m256 b1 = _mm256_loadu_ps(fb + l);
        const __m256 a2 = _mm256_loadu_ps(sa + l);
        const __m256 b2 = _mm256_loadu_ps(sb + l);
        _mm256_storeu_ps(oa + l, _mm256_mul_ps(a1, a2));
        _mm256_storeu_ps(ob + l, _mm256_fmadd_ps(a2, b1, b2));
    }
    for (; l < lanes; ++l) {
        const float a1 = fa[l], b1 = fb[l], a2 = sa[l], b2 = sb[l];
        oa[l] = a1 * a2;
        ob[l] = a2 * b1 + b2;
    }
}

void compose(const double* fa, const double* fb, const double* sa, const double* sb, double* oa,
             double* ob, std::size_t lanes) {
    std::size_t l = 0;
    for (; l + 4 <= lanes; l += 4) {
        const __m256d a1 = _mm256_loadu_pd(fa + l);
        const __m256d b1 = _mm256_loadu_pd(fb + l);
        const __m256d a2 = _mm256_loadu_pd(sa + l);
        const __m256d b2 = _mm256_loadu_pd(sb + l);
        _mm256_storeu_pd(oa + l, _mm256_mul_pd(a1, a2));
        _mm256_storeu_pd(ob + l, _mm256_fmadd_pd(a2, b1, b2));
    }
    for (; l < lanes; ++l) {
        const double a1 = fa[l], b1 = fb[l], a2 = sa[l], b2 = sb[l];
        oa[l] = a1 * a2;
        ob[l] = a2 * b1 + b2;
    }
}

namespace {

// Cephes-style single-precision exp: range reduction by ln 2, degree-5
// polynomial, exponent reconstruction through the integer unit.
inline __m256 exp_ps(__m256 x) {
    const __m256 hi = _mm256_set1_ps(88.3762626647949f);
    const __m256 lo = _mm256_set1_ps(-88.3762626647949f);
    const __m256 log2e = _mm256_set1_ps(1.44269504088896341f);
    const __m256 c1 = _mm256_set1_ps(0.693359375f);
    const __m256 c2 = _mm256_set1_ps(-2.12194440e-4f);

    x = _mm256_min_ps(x, hi);
    x = _mm256_max_ps(x, lo);

    __m256 fx = _mm256_fmadd_ps(x, log2e, _mm256_set1_ps(0.5f));
    fx = _mm256_floor_ps(fx);
    x = _mm256_fnmadd_ps(fx, c1, x);
    x = _mm256_fnmadd_ps(fx, c2, x);

    const __m256 z = _mm256_mul_ps(x, x);
    __m256 y = _mm256_set1_ps(1.9875691500e-4f);
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.3981999507e-3f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(8.3334519073e-3f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(4.1665795894e-2f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.6666665459e-1f));
    y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(5.0000001201e-1f));
    y = _mm256_fmadd_ps(y, z, x);
    y = _mm256_add_ps(y, _mm256_set1_ps(1.0f));

    __m256i n = _mm256_cvttps_epi32(fx);
    n = _mm256_add_epi32(n, _mm256_set1_epi32(0x7f));
    n = _mm256_slli_epi32(n, 23);
    return _mm256_mul_ps(y, _mm256_castsi256_ps(n));
}

}  // namespace

void exp(const float* x, float* y, std::size_t n) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, exp_ps(_mm256_loadu_ps(x + i)));
    if (i < n) {
        float xin[8] = {0, 0, 0, 0, 0, 0, 0, 0};
        float yout[8];
        for (std::size_t j = 0; i + j < n; ++j) xin[j] = x[i + j];
        _mm256_storeu_ps(yout, exp_ps(_mm256_loadu_ps(xin)));
        for (std::size_t j = 0; i + j < n; ++j) y[i + j] = yout[j];
    }
}

void gemm_nn_6x16(std::size_t kc, const float* a_panel, const float* b, std::size_t ldb, float* c,
                  std::size_t ldc) {
    __m256 c00 = _mm256_loadu_ps(c + 0 * ldc), c01 = _mm256_loadu_ps(c + 0 * ldc + 8);
    __m256 c10 = _mm256_loadu_ps(c + 1 * ldc), c11 = _mm256_loadu_ps(c + 1 * ldc + 8);
    __m256 c20 = _mm256_loadu_ps(c + 2 * ldc), c21 = _mm256_loadu_ps(c + 2 * ldc + 8);
    __m256 c30 = _mm256_loadu_ps(c + 3 * ldc), c31 = _mm256_loadu_ps(c + 3 * ldc + 8);
    __m256 c40 = _mm256_loadu_ps(c + 4 * ldc), c41 = _mm256_loadu_ps(c + 4 * ldc + 8);
    __m256 c50 = _mm256_loadu_ps(c + 5 * ldc), c51 = _mm256_loadu_ps(c + 5 * ldc + 8);
    for (std::size_t k = 0; k < kc; ++k) {
        const float* brow = b + k * ldb;
        const __m256 b0 = _mm256_loadu_ps(brow);
        const __m256 b1 = _mm256_loadu_ps(brow + 8);
        const float* ap = a_panel + k * 6;
        __m256 a = _mm256_broadcast_ss(ap + 0);
        c00 = _mm256_fmadd_ps(a, b0, c00);
        c01 = _mm256_fmadd_ps(a, b1, c01);
        a = _mm256_broadcast_ss(ap + 1);
        c10 = _mm256_fmadd_ps(a, b0, c10);
        c11 = _mm256_fmadd_ps(a, b1, c11);
        a = _mm256_broadcast_ss(ap + 2);
        c20 = _mm256_fmadd_ps(a, b0, c20);
        c21 = _mm256_fmadd_ps(a, b1, c21);
        a = _mm256_broadcast_ss(ap + 3);
        c30 = _mm256_fmadd_ps(a, b0, c30);
        c31 = _mm256_fmadd_ps(a, b1, c31);
        a = _mm256_broadcast_ss(ap + 4);
        c40 = _mm256_fmadd_ps(a, b0, c40);
        c41 = _mm256_fmadd_ps(a, b1, c41);
        a = _mm256_broadcast_ss(ap + 5);
        c50 = _mm256_fmadd_ps(a, b0, c50);
        c51 = _mm256_fmadd_ps(a, b1, c51);
    }
    _mm256_storeu_ps(c + 0 * ldc, c00);
    _mm256_storeu_ps(c + 0 * ldc + 8, c01);
    _mm256_storeu_ps(c + 1 * ldc, c10);
    _mm256_storeu_ps(c + 1 * ldc + 8, c11);
    _mm256_storeu_ps(c + 2 * ldc, c20);
    _mm256_storeu_ps(c + 2 * ldc + 8, c21);
    _mm256_storeu_ps(c + 3 * ldc, c30);
    _mm256_storeu_ps(c + 3 * ldc + 8, c31);
    _mm256_storeu_ps(c + 4 * ldc, c40);
    _mm256_storeu_ps(c + 4 * ldc + 8, c41);
    _mm256_storeu_ps(c + 5 * ldc, c50);
    _mm256_storeu_ps(c + 5 * ldc + 8, c51);
}

void gemm_nt_4x4(std::size_t k, const float* a, std::size_t lda, const float* b, std::size_t ldb,
                 float* c, std::size_t ldc) {
    __m256 acc[4][4];
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) acc[i][j] = _mm256_setzero_ps();
    std::size_t p = 0;
    for (; p + 8 <= k; p += 8) {
        const __m256 a0 = _mm256_loadu_ps(a + 0 * lda + p);
        const __m256 a1 = _mm256_loadu_ps(a + 1 * lda + p);
        const __m256 a2 = _mm256_loadu_ps(a + 2 * lda + p);
        const __m256 a3 = _mm256_loadu_ps(a + 3 * lda + p);
        for (int j = 0; j < 4; ++j) {
            const __m256 bj = _mm256_loadu_ps(b + j * ldb + p);
            acc[0][j] = _mm256_fmadd_ps(a0, bj, acc[0][j]);
            acc[1][j] = _mm256_fmadd_ps(a1, bj, acc[1][j]);
            acc[2][j] = _mm256_fmadd_ps(a2, bj, acc[2][j]);
            acc[3][j] = _mm256_fmadd_ps(a3, bj, acc[3][j]);
        }
    }
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            float s = hsum(acc[i][j]);
            for (std::size_t q = p; q < k; ++q) s += a[i * lda + q] * b[j * ldb + q];
            c[i * ldc + j] += s;
        }
    }
}

void adamw(float* w, float* m, float* v, const float* g, std::size_t n, const AdamCoeffs& k) {
    const __m256 b1 = _mm256_set1_ps(k.beta1), om1 = _mm256_set1_ps(1.0f - k.beta1);
    const __m256 b2 = _mm256_set1_ps(k.beta2), om2 = _mm256_set1_ps(1.0f - k.beta2);
    const __m256 c1 = _mm256_set1_ps(k.inv_bias1), c2 = _mm256_set1_ps(k.inv_bias2);
    const __m256 lr = _mm256_set1_ps(k.lr), eps = _mm256_set1_ps(k.eps), decay = _mm256_set1_ps(k.decay);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 gi = _mm256_loadu_ps(g + i);
        const __m256 mi = _mm256_add_ps(_mm256_mul_ps(b1, _mm256_loadu_ps(m + i)), _mm256_mul_ps(om1, gi));
        const __m256 vi =
            _mm256_add_ps(_mm256_mul_ps(b2, _mm256_loadu_ps(v + i)), _mm256_mul_ps(om2, _mm256_mul_ps(gi, gi)));
        _mm256_storeu_ps(m + i, mi);
        _mm256_storeu_ps(v + i, vi);
        const __m256 den = _mm256_add_ps(_mm256_sqrt_ps(_mm256_mul_ps(vi, c2)), eps);
        const __m256 step = _mm256_div_ps(_mm256_mul_ps(mi, c1), den);
        _mm256_storeu_ps(w + i, _mm256_sub_ps(_mm256_mul_ps(_mm256_loadu_ps(w + i), decay), _mm256_mul_ps(lr, step)));
    }
    if (i < n) scalar::adamw(w + i, m + i, v + i, g + i, n - i, k);
}

}  // namespace cumamba::simd::avx2
