#include "picodiff/kernels.hpp"

#include <cstring>

namespace picodiff {
namespace kernels {

namespace {
bool g_parallel = true;
}

void set_parallel(bool enabled) { g_parallel = enabled; }
bool parallel() { return g_parallel; }

// Each C row accumulates rank-1 updates a[i,p] * B[p,:]; the p loop is the
// fixed reduction order, the n loop vectorizes. Rows are processed four at a
// time so every loaded B row feeds four accumulator rows.
void sgemm_nn(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate) {
    int m4 = m / 4;
#pragma omp parallel for schedule(static) if (g_parallel && m4 > 1)
    for (int ib = 0; ib < m4; ++ib) {
        int i = ib * 4;
        float* c0 = c + static_cast<int64_t>(i) * n;
        float* c1 = c0 + n;
        float* c2 = c1 + n;
        float* c3 = c2 + n;
        if (!accumulate) {
            std::memset(c0, 0, sizeof(float) * n * 4);
        }
        const float* a0 = a + static_cast<int64_t>(i) * k;
        const float* a1 = a0 + k;
        const float* a2 = a1 + k;
        const float* a3 = a2 + k;
        for (int p = 0; p < k; ++p) {
            float v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
            const float* brow = b + static_cast<int64_t>(p) * n;
#pragma omp simd
            for (int j = 0; j < n; ++j) {
                float bv = brow[j];
                c0[j] += v0 * bv;
                c1[j] += v1 * bv;
                c2[j] += v2 * bv;
                c3[j] += v3 * bv;
            }
        }
    }
    for (int i = m4 * 4; i < m; ++i) {
        float* crow = c + static_cast<int64_t>(i) * n;
        if (!accumulate) std::memset(crow, 0, sizeof(float) * n);
        const float* arow = a + static_cast<int64_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            float av = arow[p];
            const float* brow = b + static_cast<int64_t>(p) * n;
#pragma omp simd
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void sgemm_nt(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate) {
#pragma omp parallel for schedule(static) if (g_parallel && m > 1)
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<int64_t>(i) * k;
        float* crow = c + static_cast<int64_t>(i) * n;
        int j = 0;
        for (; j + 2 <= n; j += 2) {
            const float* b0 = b + static_cast<int64_t>(j) * k;
            const float* b1 = b0 + k;
            float acc0 = 0.0f, acc1 = 0.0f;
#pragma omp simd reduction(+ : acc0, acc1)
            for (int p = 0; p < k; ++p) {
                float av = arow[p];
                acc0 += av * b0[p];
                acc1 += av * b1[p];
            }
            crow[j] = accumulate ? crow[j] + acc0 : acc0;
            crow[j + 1] = accumulate ? crow[j + 1] + acc1 : acc1;
        }
        for (; j < n; ++j) {
            const float* brow = b + static_cast<int64_t>(j) * k;
            float acc = 0.0f;
#pragma omp simd reduction(+ : acc)
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] = accumulate ? crow[j] + acc : acc;
        }
    }
}

void sgemm_tn(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate) {
    int m4 = m / 4;
#pragma omp parallel for schedule(static) if (g_parallel && m4 > 1)
    for (int ib = 0; ib < m4; ++ib) {
        int i = ib * 4;
        float* c0 = c + static_cast<int64_t>(i) * n;
        float* c1 = c0 + n;
        float* c2 = c1 + n;
        float* c3 = c2 + n;
        if (!accumulate) {
            std::memset(c0, 0, sizeof(float) * n * 4);
        }
        for (int p = 0; p < k; ++p) {
            const float* arow = a + static_cast<int64_t>(p) * m + i;
            float v0 = arow[0], v1 = arow[1], v2 = arow[2], v3 = arow[3];
            const float* brow = b + static_cast<int64_t>(p) * n;
#pragma omp simd
            for (int j = 0; j < n; ++j) {
                float bv = brow[j];
                c0[j] += v0 * bv;
                c1[j] += v1 * bv;
                c2[j] += v2 * bv;
                c3[j] += v3 * bv;
            }
        }
    }
    for (int i = m4 * 4; i < m; ++i) {
        float* crow = c + static_cast<int64_t>(i) * n;
        if (!accumulate) std::memset(crow, 0, sizeof(float) * n);
        for (int p = 0; p < k; ++p) {
            float av = a[static_cast<int64_t>(p) * m + i];
            const float* brow = b + static_cast<int64_t>(p) * n;
#pragma omp simd
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void im2col(const float* x, int c, int h, int w, int kh, int kw, int stride, int pad,
            int ho, int wo, float* col) {
    int rows = c * kh * kw;
#pragma omp parallel for schedule(static) if (g_parallel && rows > 1)
    for (int r = 0; r < rows; ++r) {
        int kx = r % kw;
        int ky = (r / kw) % kh;
        int ch = r / (kw * kh);
        const float* xc = x + static_cast<int64_t>(ch) * h * w;
        float* crow = col + static_cast<int64_t>(r) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
            int iy = oy * stride - pad + ky;
            float* dst = crow + static_cast<int64_t>(oy) * wo;
            if (iy < 0 || iy >= h) {
                std::memset(dst, 0, sizeof(float) * wo);
                continue;
            }
            const float* src = xc + static_cast<int64_t>(iy) * w;
            for (int ox = 0; ox < wo; ++ox) {
                int ix = ox * stride - pad + kx;
                dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0f;
            }
        }
    }
}

// Parallel over input channels: every x element belongs to one channel, so
// the scatter-adds from different threads never alias.
void col2im(const float* col, int c, int h, int w, int kh, int kw, int stride, int pad,
            int ho, int wo, float* x) {
#pragma omp parallel for schedule(static) if (g_parallel && c > 1)
    for (int ch = 0; ch < c; ++ch) {
        float* xc = x + static_cast<int64_t>(ch) * h * w;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                int r = (ch * kh + ky) * kw + kx;
                const float* crow = col + static_cast<int64_t>(r) * ho * wo;
                for (int oy = 0; oy < ho; ++oy) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    float* dst = xc + static_cast<int64_t>(iy) * w;
                    const float* src = crow + static_cast<int64_t>(oy) * wo;
                    for (int ox = 0; ox < wo; ++ox) {
                        int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace kernels

namespace kernels_serial {

void sgemm_nn(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) {
                acc += static_cast<double>(a[i * k + p]) * b[p * n + j];
            }
            float v = static_cast<float>(acc);
            c[i * n + j] = accumulate ? c[i * n + j] + v : v;
        }
    }
}

void sgemm_nt(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) {
                acc += static_cast<double>(a[i * k + p]) * b[j * k + p];
            }
            float v = static_cast<float>(acc);
            c[i * n + j] = accumulate ? c[i * n + j] + v : v;
        }
    }
}

void sgemm_tn(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) {
                acc += static_cast<double>(a[p * m + i]) * b[p * n + j];
            }
            float v = static_cast<float>(acc);
            c[i * n + j] = accumulate ? c[i * n + j] + v : v;
        }
    }
}

void conv2d(const float* x, const float* w, float* y,
            int c_in, int h, int w_in, int c_out, int kh, int kw, int stride, int pad,
            int ho, int wo) {
    for (int oc = 0; oc < c_out; ++oc) {
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                double acc = 0.0;
                for (int ic = 0; ic < c_in; ++ic) {
                    for (int ky = 0; ky < kh; ++ky) {
                        int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= w_in) continue;
                            acc += static_cast<double>(x[(ic * h + iy) * w_in + ix]) *
                                   w[((oc * c_in + ic) * kh + ky) * kw + kx];
                        }
                    }
                }
                y[(oc * ho + oy) * wo + ox] = static_cast<float>(acc);
            }
        }
    }
}

}  // namespace kernels_serial
}  // namespace picodiff
