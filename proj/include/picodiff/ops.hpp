#pragma once

#include "picodiff/tensor.hpp"

namespace picodiff {

// Elementwise. Shapes must match exactly; no broadcasting beyond the
// dedicated ops below.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
Tensor add_scaled(const Tensor& a, const Tensor& b, float s);  // a + s * b
Tensor silu(const Tensor& x);
Tensor gelu(const Tensor& x);

// Copy-reshape (backward reshapes the gradient back).
Tensor reshape(const Tensor& x, std::vector<int> shape);

// Matrix products. bmm treats all leading dims as batch; trans_b reads b as
// [..., n, k]. matmul is the plain 2-D case.
Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b = false);
Tensor matmul(const Tensor& a, const Tensor& b);

// y[..., out] = x[..., in] * w[out, in]^T + b. Pass an undefined Tensor to
// skip the bias.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// x: [B, C, H, W], w: [O, C, kh, kw] (odd kernels), b: [O] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);

Tensor softmax(const Tensor& x, int axis);

// Normalizes the last dim; gain/bias have that extent.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps = 1e-5f);

// x: [B, C, H, W]; statistics per (batch, group); gain/bias per channel.
Tensor group_norm(const Tensor& x, int groups, const Tensor& gain, const Tensor& bias,
                  float eps = 1e-5f);

// softmax(q k^T / sqrt(d)) v over the last two dims; any leading batch dims.
// key_bias, when defined, is [B, Lk] (0 or -inf style values, not a grad
// participant) added to every query row's scores; requires 4-D inputs.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const Tensor& key_bias = Tensor());

// [B, L, D] <-> [B, heads, L, D/heads]
Tensor split_heads(const Tensor& x, int heads);
Tensor merge_heads(const Tensor& x);

// [B, C, H, W] <-> [B, H*W, C]
Tensor chw_to_tokens(const Tensor& x);
Tensor tokens_to_chw(const Tensor& x, int c, int h, int w);

Tensor upsample_nearest_2x(const Tensor& x);
Tensor concat_channels(const Tensor& a, const Tensor& b);

// x[B, C, H, W] + t[B, C] broadcast over spatial positions.
Tensor add_channel_bias(const Tensor& x, const Tensor& t);

// Reductions (f64 accumulation).
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor mse_loss(const Tensor& a, const Tensor& b);

// [L, D] -> [D], mean over rows.
Tensor mean_rows(const Tensor& x);

}  // namespace picodiff
