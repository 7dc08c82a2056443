#pragma once

#include <cstdint>
#include <vector>

#include "gshdr/attention.hpp"
#include "gshdr/tensor.hpp"

namespace gshdr {

// LayerNorm epsilon used by every pre-norm in the network.
inline constexpr double kNormEps = 1e-6;

// Hidden-width multiplier of the feed-forward sub-layer.
inline constexpr std::int64_t kFfnExpansion = 2;

enum class FfnMode {
    Gated,  // GELU(pointwise+depthwise branch) * (pointwise+depthwise branch)
    Plain,  // two pointwise convs with a GELU between, no gate
};

// Feed-forward sub-layer parameters. Gated mode uses branches a (gate) and
// b (value), each pointwise C->aC then depthwise 3x3; plain mode uses only
// a_pw as the expansion and leaves the depthwise/b tensors undefined.
template <typename T>
struct FeedForwardParams {
    FfnMode mode = FfnMode::Gated;
    Tensor<T> norm_gamma, norm_beta;
    Tensor<T> a_pw_w, a_pw_b;
    Tensor<T> a_dw_w, a_dw_b;
    Tensor<T> b_pw_w, b_pw_b;
    Tensor<T> b_dw_w, b_dw_b;
    Tensor<T> out_w, out_b;
};

// One transformer unit: unshifted attention, feed-forward, shifted
// attention, feed-forward, each wrapped in a pre-norm residual.
template <typename T>
struct UnitParams {
    Tensor<T> norm1_gamma, norm1_beta;
    AttentionParams<T> attn1;
    FeedForwardParams<T> ffn1;
    Tensor<T> norm2_gamma, norm2_beta;
    AttentionParams<T> attn2;
    FeedForwardParams<T> ffn2;
};

// A residual block: a chain of units plus a trailing full 3x3 convolution,
// with a skip from block input to output.
template <typename T>
struct BlockParams {
    std::vector<UnitParams<T>> units;
    Tensor<T> conv_w, conv_b;
};

template <typename T>
struct DownscaleParams {
    Tensor<T> w, b;  // pointwise 4C -> 2C after pixel_unshuffle(2)
};

template <typename T>
struct UpscaleParams {
    Tensor<T> w, b;  // pointwise C -> 2C before pixel_shuffle(2)
};

template <typename T>
Tensor<T> feed_forward(const Tensor<T>& x, const FeedForwardParams<T>& p);

template <typename T>
Tensor<T> transformer_unit(const Tensor<T>& x, const UnitParams<T>& p, std::int64_t m,
                           std::int64_t heads);

template <typename T>
Tensor<T> run_block(const Tensor<T>& x, const BlockParams<T>& p, std::int64_t m,
                    std::int64_t heads);

template <typename T>
Tensor<T> downscale(const Tensor<T>& x, const DownscaleParams<T>& p);

template <typename T>
Tensor<T> upscale(const Tensor<T>& x, const UpscaleParams<T>& p);

}  // namespace gshdr
