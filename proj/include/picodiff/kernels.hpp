#pragma once

#include <cstdint>

namespace picodiff {
namespace kernels {

// Toggles the OpenMP paths. Every kernel assigns each output element to
// exactly one thread and keeps the per-element reduction order fixed, so
// results are bit-identical for any thread count; the switch only matters
// for the benchmark and for forcing single-threaded runs.
void set_parallel(bool enabled);
bool parallel();

// Row-major GEMM family. C is m x n.
//   nn: C (+)= A[m x k] * B[k x n]
//   nt: C (+)= A[m x k] * B[n x k]^T
//   tn: C (+)= A[k x m]^T * B[k x n]
void sgemm_nn(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate);
void sgemm_nt(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate);
void sgemm_tn(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate);

// Patch matrix layout: col[(C*kh*kw) x (Ho*Wo)], zero-padded borders.
void im2col(const float* x, int c, int h, int w, int kh, int kw, int stride, int pad,
            int ho, int wo, float* col);
// Scatter-add transpose of im2col; accumulates into x (caller zeroes it).
void col2im(const float* col, int c, int h, int w, int kh, int kw, int stride, int pad,
            int ho, int wo, float* x);

}  // namespace kernels

// Naive loop implementations with f64 accumulators, kept as the reference
// the production kernels are tested and benchmarked against.
namespace kernels_serial {

void sgemm_nn(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate);
void sgemm_nt(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate);
void sgemm_tn(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate);
void conv2d(const float* x, const float* w, float* y,
            int c_in, int h, int w_in, int c_out, int kh, int kw, int stride, int pad,
            int ho, int wo);

}  // namespace kernels_serial
}  // namespace picodiff
