#include "gshdr/blocks.hpp"

#include <string>

#include "gshdr/ops.hpp"

namespace gshdr {

namespace {

template <typename T>
void need_channels(const Tensor<T>& x, i64 c, const char* who) {
    if (!x.defined() || x.rank() != 4)
        fail(ErrorKind::Shape, std::string(who) + ": expected a rank-4 input");
    if (x.dim(1) != c)
        fail(ErrorKind::Shape, std::string(who) + ": expected " + std::to_string(c) +
                                   " channels, got " + x.shape().str());
}

}  // namespace

template <typename T>
Tensor<T> feed_forward(const Tensor<T>& x, const FeedForwardParams<T>& p) {
    if (!p.norm_gamma.defined()) fail(ErrorKind::Shape, "feed_forward: missing norm parameters");
    need_channels(x, p.norm_gamma.dim(0), "feed_forward");
    Tensor<T> n = ops::layer_norm(x, p.norm_gamma, p.norm_beta, T(kNormEps));
    Tensor<T> h;
    if (p.mode == FfnMode::Gated) {
        Tensor<T> a = ops::conv2d(n, p.a_pw_w, p.a_pw_b, ops::ConvKind::Pointwise1x1);
        a = ops::conv2d(a, p.a_dw_w, p.a_dw_b, ops::ConvKind::Depthwise3x3);
        Tensor<T> b = ops::conv2d(n, p.b_pw_w, p.b_pw_b, ops::ConvKind::Pointwise1x1);
        b = ops::conv2d(b, p.b_dw_w, p.b_dw_b, ops::ConvKind::Depthwise3x3);
        h = ops::mul(ops::gelu(a), b);
    } else {
        h = ops::gelu(ops::conv2d(n, p.a_pw_w, p.a_pw_b, ops::ConvKind::Pointwise1x1));
    }
    return ops::add(x, ops::conv2d(h, p.out_w, p.out_b, ops::ConvKind::Pointwise1x1));
}

template <typename T>
Tensor<T> transformer_unit(const Tensor<T>& x, const UnitParams<T>& p, i64 m, i64 heads) {
    need_channels(x, p.norm1_gamma.dim(0), "transformer_unit");
    Tensor<T> y = ops::add(
        x, window_attention(ops::layer_norm(x, p.norm1_gamma, p.norm1_beta, T(kNormEps)), p.attn1,
                            m, heads, 0));
    y = feed_forward(y, p.ffn1);
    y = ops::add(
        y, window_attention(ops::layer_norm(y, p.norm2_gamma, p.norm2_beta, T(kNormEps)), p.attn2,
                            m, heads, m / 2));
    return feed_forward(y, p.ffn2);
}

template <typename T>
Tensor<T> run_block(const Tensor<T>& x, const BlockParams<T>& p, i64 m, i64 heads) {
    Tensor<T> h = x;
    for (const UnitParams<T>& u : p.units) h = transformer_unit(h, u, m, heads);
    return ops::add(x, ops::conv2d(h, p.conv_w, p.conv_b, ops::ConvKind::Full3x3));
}

template <typename T>
Tensor<T> downscale(const Tensor<T>& x, const DownscaleParams<T>& p) {
    return ops::conv2d(ops::pixel_unshuffle(x, 2), p.w, p.b, ops::ConvKind::Pointwise1x1);
}

template <typename T>
Tensor<T> upscale(const Tensor<T>& x, const UpscaleParams<T>& p) {
    return ops::pixel_shuffle(ops::conv2d(x, p.w, p.b, ops::ConvKind::Pointwise1x1), 2);
}

#define GSHDR_INSTANTIATE_BLOCKS(T)                                                       \
    template Tensor<T> feed_forward<T>(const Tensor<T>&, const FeedForwardParams<T>&);    \
    template Tensor<T> transformer_unit<T>(const Tensor<T>&, const UnitParams<T>&, i64,   \
                                           i64);                                          \
    template Tensor<T> run_block<T>(const Tensor<T>&, const BlockParams<T>&, i64, i64);   \
    template Tensor<T> downscale<T>(const Tensor<T>&, const DownscaleParams<T>&);         \
    template Tensor<T> upscale<T>(const Tensor<T>&, const UpscaleParams<T>&);

GSHDR_INSTANTIATE_BLOCKS(float)
GSHDR_INSTANTIATE_BLOCKS(double)
#undef GSHDR_INSTANTIATE_BLOCKS

}  // namespace gshdr
