/* Contiguous float32 loops for the compiled kernels.  Written as plain C with
 * restrict pointers and ternary clamps so gcc -O3 can vectorize them. */
#ifndef SAO_FASTKERN_H
#define SAO_FASTKERN_H

#include <stddef.h>

#define SAO_GELU_C 0.7978845608028654f
#define SAO_GELU_K 0.044715f
#define SAO_TANH_CLIP 7.90531110763549805f

static inline float sao_tanh_f(float x) {
    float xc = x > SAO_TANH_CLIP ? SAO_TANH_CLIP : x;
    xc = xc < -SAO_TANH_CLIP ? -SAO_TANH_CLIP : xc;
    float x2 = xc * xc;
    float p = -2.76076847742355e-16f;
    p = p * x2 + 2.00018790482477e-13f;
    p = p * x2 - 8.60467152213735e-11f;
    p = p * x2 + 5.12229709037114e-08f;
    p = p * x2 + 1.48572235717979e-05f;
    p = p * x2 + 6.37261928875436e-04f;
    p = p * x2 + 4.89352455891786e-03f;
    p = p * xc;
    float q = 1.19825839466702e-06f;
    q = q * x2 + 1.18534705686654e-04f;
    q = q * x2 + 2.26843463243900e-03f;
    q = q * x2 + 4.89352518554385e-03f;
    return p / q;
}

static inline float sao_gelu_f(float v) {
    float th = sao_tanh_f(SAO_GELU_C * (v + SAO_GELU_K * v * v * v));
    return 0.5f * v * (1.0f + th);
}

static inline float sao_gelu_grad_f(float v) {
    float th = sao_tanh_f(SAO_GELU_C * (v + SAO_GELU_K * v * v * v));
    float dinner = SAO_GELU_C * (1.0f + 3.0f * SAO_GELU_K * v * v);
    return 0.5f * (1.0f + th) + 0.5f * v * (1.0f - th * th) * dinner;
}

static void sao_gelu_fwd_f(const float *restrict x, float *restrict out, size_t n) {
    for (size_t i = 0; i < n; i++) out[i] = sao_gelu_f(x[i]);
}

static void sao_gelu_bwd_f(const float *restrict x, const float *restrict g,
                           float *restrict out, size_t n) {
    for (size_t i = 0; i < n; i++) out[i] = g[i] * sao_gelu_grad_f(x[i]);
}

/* out[i, j, :] = gelu(a[i, :] + b[j, :] + bias) */
static void sao_pair_fwd_f(const float *restrict a, const float *restrict b,
                           const float *restrict bias, float *restrict out,
                           size_t n, size_t m, size_t d) {
    for (size_t i = 0; i < n; i++) {
        const float *ai = a + i * d;
        for (size_t j = 0; j < m; j++) {
            const float *bj = b + j * d;
            float *o = out + (i * m + j) * d;
            for (size_t k = 0; k < d; k++) o[k] = sao_gelu_f(ai[k] + bj[k] + bias[k]);
        }
    }
}

/* Recomputes the pre-activation instead of caching it. */
static void sao_pair_bwd_f(const float *restrict a, const float *restrict b,
                           const float *restrict bias, const float *restrict g,
                           float *restrict ga, float *restrict gb,
                           size_t n, size_t m, size_t d) {
    for (size_t i = 0; i < n; i++) {
        const float *ai = a + i * d;
        float *gai = ga + i * d;
        for (size_t j = 0; j < m; j++) {
            const float *bj = b + j * d;
            const float *gij = g + (i * m + j) * d;
            float *gbj = gb + j * d;
            for (size_t k = 0; k < d; k++) {
                float gl = gij[k] * sao_gelu_grad_f(ai[k] + bj[k] + bias[k]);
                gai[k] += gl;
                gbj[k] += gl;
            }
        }
    }
}

#endif
