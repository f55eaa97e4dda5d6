// NEON variants of the scan kernels (AArch64 only).

#include <arm_neon.h>

#include "cumamba/simd/kernels.hpp"

namespace cumamba::simd::neon {

void recurrence(const RecurrenceView<float>& v, float* state) {
    const std::size_t lanes = v.lanes;
    for (std::size_t t = 0; t < v.steps; ++t) {
        const std::ptrdiff_t row = static_cast<std::ptrdiff_t>(t) * v.stride;
        const float* a = v.a + row;
        const float* b = v.b + row;
        float* h = v.h != nullptr ? v.h + row : nullptr;
        std::size_t l = 0;
        for (; l + 4 <= lanes; l += 4) {
            const float32x4_t s = vfmaq_f32(vld1q_f32(b + l), vld1q_f32(a + l), vld1q_f32(state + l));
            vst1q_f32(state + l, s);
            if (h != nullptr) vst1q_f32(h + l, s);
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
        const std::ptrdiff_t row = static_cast<std::ptrdiff_t>(t) * v.stride;
        const float* a = v.a + row;
        const float* b = v.b + row;
        std::size_t l = 0;
        for (; l + 4 <= lanes; l += 4) {
            const float32x4_t av = vld1q_f32(a + l);
            vst1q_f32(prod_a + l, vmulq_f32(vld1q_f32(prod_a + l), av));
            vst1q_f32(sum_b + l, vfmaq_f32(vld1q_f32(b + l), av, vld1q_f32(sum_b + l)));
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
    for (; l + 4 <= lanes; l += 4) {
        const float32x4_t a1 = vld1q_f32(fa + l);
        const float32x4_t b1 = vld1q_f32(fb + l);
        const float32x4_t a2 = vld1q_f32(sa + l);
        const float32x4_t b2 = vld1q_f32(sb + l);
        vst1q_f32(oa + l, vmulq_f32(a1, a2));
        vst1q_f32(ob + l, vfmaq_f32(b2, a2, b1));
    }
    for (; l < lanes; ++l) {
        const float a1 = fa[l], b1 = fb[l], a2 = sa[l], b2 = sb[l];
        oa[l] = a1 * a2;
        ob[l] = a2 * b1 + b2;
    }
}

void adamw(float* w, float* m, float* v, const float* g, std::size_t n, const AdamCoeffs& k) {
    const float32x4_t b1 = vdupq_n_f32(k.beta1), om1 = vdupq_n_f32(1.0f - k.beta1);
    const float32x4_t b2 = vdupq_n_f32(k.beta2), om2 = vdupq_n_f32(1.0f - k.beta2);
    const float32x4_t c1 = vdupq_n_f32(k.inv_bias1), c2 = vdupq_n_f32(k.inv_bias2);
    const float32x4_t lr = vdupq_n_f32(k.lr), eps = vdupq_n_f32(k.eps), decay = vdupq_n_f32(k.decay);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const float32x4_t gi = vld1q_f32(g + i);
        const float32x4_t mi = vaddq_f32(vmulq_f32(b1, vld1q_f32(m + i)), vmulq_f32(om1, gi));
        const float32x4_t vi = vaddq_f32(vmulq_f32(b2, vld1q_f32(v + i)), vmulq_f32(om2, vmulq_f32(gi, gi)));
        vst1q_f32(m + i, mi);
        vst1q_f32(v + i, vi);
        const float32x4_t den = vaddq_f32(vsqrtq_f32(vmulq_f32(vi, c2)), eps);
        const float32x4_t step = vdivq_f32(vmulq_f32(mi, c1), den);
        vst1q_f32(w + i, vsubq_f32(vmulq_f32(vld1q_f32(w + i), decay), vmulq_f32(lr, step)));
    }
    if (i < n) scalar::adamw(w + i, m + i, v + i, g + i, n - i, k);
}

}  // namespace cumamba::simd::neon
