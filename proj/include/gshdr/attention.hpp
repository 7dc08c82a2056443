#pragma once

#include <cstdint>
#include <vector>

#include "gshdr/tensor.hpp"

namespace gshdr {

// Projections for one windowed multi-head attention layer. Weights are
// (d_model, d_model) in (input, output) layout; the per-head d_head slices
// live side by side in the output dimension. bias_table holds one learned
// offset per head and per relative position, (heads, (2M-1)^2).
template <typename T>
struct AttentionParams {
    Tensor<T> wq, bq;
    Tensor<T> wk, bk;
    Tensor<T> wv, bv;
    Tensor<T> wo, bo;
    Tensor<T> bias_table;
};

// Additive per-window mask for shifted windows: 0 for token pairs from the
// same pre-shift region, -1e9 otherwise. Shape (nW, M*M, M*M).
template <typename T>
struct ShiftMask {
    Tensor<T> mask;
    i64 window = 0;
    i64 shift = 0;
};

// Flat (M*M)^2 map from a (query, key) token pair to the bias-table column
// for their relative offset.
std::vector<std::int32_t> relative_index_map(i64 m);

template <typename T>
ShiftMask<T> build_shift_mask(i64 h, i64 w, i64 m, i64 shift);

// Windowed multi-head self-attention over (B, C, H, W). With shift > 0 the
// input is rolled by (-shift, -shift) before partitioning, masked attention
// runs inside the rolled windows, and the result is rolled back.
template <typename T>
Tensor<T> window_attention(const Tensor<T>& x, const AttentionParams<T>& p, i64 m, i64 heads,
                           i64 shift);

}  // namespace gshdr
