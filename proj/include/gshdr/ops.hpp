#pragma once

#include <cstdint>
#include <vector>

#include "gshdr/tensor.hpp"

// Differentiable primitives. Each op validates its inputs, runs the forward
// kernel, and (when a tape is active and some input requires gradients)
// records a closure that routes the output gradient back to its inputs.
// Closures capture the tensor handles they need, which keeps the backing
// storage alive for the lifetime of the tape.

namespace gshdr::ops {

using i64 = std::int64_t;

enum class ConvKind {
    Pointwise1x1,  // weight (Cout, Cin, 1, 1), no padding needed
    Depthwise3x3,  // weight (C, 1, 3, 3), reflect-padded by 1
    Full3x3,       // weight (Cout, Cin, 3, 3), reflect-padded by 1
};

// ---- elementwise -----------------------------------------------------------

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

// y = scale * x + shift
template <typename T> Tensor<T> affine(const Tensor<T>& x, T scale, T shift);
template <typename T> Tensor<T> abs(const Tensor<T>& x);
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);

// ---- reductions ------------------------------------------------------------

// Mean over every element; returns a scalar tensor of shape (1).
template <typename T> Tensor<T> mean_all(const Tensor<T>& x);

// ---- normalization / activation over structured axes -----------------------

// Channel-dimension LayerNorm on (B, C, H, W); gamma/beta have shape (C).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

// Softmax along the last dimension of a rank-3 tensor.
template <typename T> Tensor<T> softmax_lastdim(const Tensor<T>& x);

// ---- convolution -----------------------------------------------------------

// Convolution with reflect padding so spatial dims are preserved. Bias may be
// an undefined tensor to skip it.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, ConvKind kind);

// Valid (no padding) convolution; output is (H-K+1, W-K+1). `depthwise`
// selects per-channel filtering with weight (C, 1, K, K).
template <typename T>
Tensor<T> conv_valid(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, bool depthwise);

// ---- shape / layout --------------------------------------------------------

template <typename T>
Tensor<T> reflect_pad(const Tensor<T>& x, i64 top, i64 bottom, i64 left, i64 right);

template <typename T> Tensor<T> crop(const Tensor<T>& x, i64 top, i64 left, i64 oh, i64 ow);

template <typename T> Tensor<T> pixel_unshuffle(const Tensor<T>& x, i64 r);
template <typename T> Tensor<T> pixel_shuffle(const Tensor<T>& x, i64 r);

// Cyclic spatial shift; positive moves content down/right.
template <typename T> Tensor<T> roll(const Tensor<T>& x, i64 sh, i64 sw);

template <typename T> Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs);

// ---- attention building blocks ---------------------------------------------

// (B, C, H, W) -> (B*nW, M*M, C) with windows in row-major order.
template <typename T> Tensor<T> window_partition(const Tensor<T>& x, i64 m);
// Inverse of window_partition for a canvas of size (H, W).
template <typename T> Tensor<T> window_reverse(const Tensor<T>& x, i64 m, i64 h, i64 w);

// (N, t, C) -> (N*heads, t, C/heads) and back.
template <typename T> Tensor<T> split_heads(const Tensor<T>& x, i64 heads);
template <typename T> Tensor<T> merge_heads(const Tensor<T>& x, i64 heads);

// Row-major dense layer on the last dimension: y = x @ w + b with w shaped
// (in, out) and optional bias (out).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

// Batched matmul on rank-3 tensors: a (N, n, k) times b (N, k, m), or
// b (N, m, k) when transpose_b is set.
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b);

// Adds the learned relative-position bias (and an optional additive window
// mask of shape (nW, t, t)) to attention logits shaped (B*nW*heads, t, t).
// `index` maps each (query, key) pair to a row of `table` (heads, entries).
template <typename T>
Tensor<T> add_attention_bias(const Tensor<T>& logits, const Tensor<T>& table,
                             const std::vector<std::int32_t>& index, const Tensor<T>& mask,
                             i64 n_windows, i64 heads);

// ---- misc ------------------------------------------------------------------

// Range-compression curve ln(1 + mu*x) / ln(1 + mu). When `strict`, inputs
// outside [0, 1] raise a value error; otherwise they are clamped first.
template <typename T> Tensor<T> mu_law(const Tensor<T>& x, T mu, bool strict);

// Plain dtype conversion (never recorded on a tape).
template <typename To, typename From> Tensor<To> cast(const Tensor<From>& x);

}  // namespace gshdr::ops
