#include "gshdr/attention.hpp"

#include <cmath>
#include <string>

#include "gshdr/ops.hpp"

namespace gshdr {

std::vector<std::int32_t> relative_index_map(i64 m) {
    if (m < 1) fail(ErrorKind::Value, "relative_index_map: window must be positive");
    const i64 t = m * m, span = 2 * m - 1;
    std::vector<std::int32_t> idx(static_cast<std::size_t>(t * t));
    for (i64 i = 0; i < t; ++i)
        for (i64 j = 0; j < t; ++j) {
            const i64 dy = i / m - j / m, dx = i % m - j % m;
            idx[static_cast<std::size_t>(i * t + j)] =
                static_cast<std::int32_t>((dy + m - 1) * span + (dx + m - 1));
        }
    return idx;
}

// Region labels follow the three-band construction: rows (and columns) of the
// rolled canvas split into [0, H-M), [H-M, H-shift) and [H-shift, H); a
// token's label combines its row and column band. Pairs with different
// labels come from discontiguous source content and are masked off.
template <typename T>
ShiftMask<T> build_shift_mask(i64 h, i64 w, i64 m, i64 shift) {
    if (m < 1) fail(ErrorKind::Value, "build_shift_mask: window must be positive");
    if (shift < 0 || shift >= m)
        fail(ErrorKind::Value, "build_shift_mask: shift " + std::to_string(shift) +
                                   " must lie in [0, window)");
    if (h % m != 0 || w % m != 0)
        fail(ErrorKind::Shape, "build_shift_mask: canvas " + std::to_string(h) + "x" +
                                   std::to_string(w) + " not divisible by window " +
                                   std::to_string(m));
    const i64 t = m * m, nw = (h / m) * (w / m);
    ShiftMask<T> out;
    out.window = m;
    out.shift = shift;
    out.mask = Tensor<T>(Shape{nw, t, t});
    if (shift == 0) return out;
    auto band = [m, shift](i64 pos, i64 extent) {
        if (pos < extent - m) return 0;
        if (pos < extent - shift) return 1;
        return 2;
    };
    T* mp = out.mask.data();
    for (i64 wy = 0; wy < h / m; ++wy)
        for (i64 wx = 0; wx < w / m; ++wx) {
            T* win = mp + (wy * (w / m) + wx) * t * t;
            for (i64 i = 0; i < t; ++i) {
                const int li = band(wy * m + i / m, h) * 3 + band(wx * m + i % m, w);
                for (i64 j = 0; j < t; ++j) {
                    const int lj = band(wy * m + j / m, h) * 3 + band(wx * m + j % m, w);
                    win[i * t + j] = (li == lj) ? T(0) : T(-1e9);
                }
            }
        }
    return out;
}

template <typename T>
Tensor<T> window_attention(const Tensor<T>& x, const AttentionParams<T>& p, i64 m, i64 heads,
                           i64 shift) {
    if (!x.defined() || x.rank() != 4)
        fail(ErrorKind::Shape, "window_attention: expected a rank-4 input");
    const i64 C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (!p.wq.defined() || p.wq.rank() != 2 || p.wq.dim(0) != C || p.wq.dim(1) != C)
        fail(ErrorKind::Shape, "window_attention: projection width does not match input channels " +
                                   std::to_string(C));
    if (heads < 1 || C % heads != 0)
        fail(ErrorKind::Shape, "window_attention: heads " + std::to_string(heads) +
                                   " must divide channels " + std::to_string(C));
    if (H % m != 0 || W % m != 0)
        fail(ErrorKind::Shape, "window_attention: input " + x.shape().str() +
                                   " not divisible into " + std::to_string(m) + "x" +
                                   std::to_string(m) + " windows");
    if (shift < 0 || shift >= m)
        fail(ErrorKind::Value, "window_attention: shift must lie in [0, window)");
    const i64 span = 2 * m - 1;
    if (p.bias_table.rank() != 2 || p.bias_table.dim(0) != heads ||
        p.bias_table.dim(1) != span * span)
        fail(ErrorKind::Shape, "window_attention: bias table must be (heads, (2M-1)^2)");
    const i64 dh = C / heads, nw = (H / m) * (W / m);

    Tensor<T> canvas = shift > 0 ? ops::roll(x, -shift, -shift) : x;
    Tensor<T> tok = ops::window_partition(canvas, m);  // (B*nW, t, C)
    Tensor<T> q = ops::split_heads(ops::linear(tok, p.wq, p.bq), heads);
    Tensor<T> k = ops::split_heads(ops::linear(tok, p.wk, p.bk), heads);
    Tensor<T> v = ops::split_heads(ops::linear(tok, p.wv, p.bv), heads);
    Tensor<T> logits = ops::affine(ops::bmm(q, k, true), T(1) / std::sqrt(T(dh)), T(0));
    Tensor<T> mask;  // undefined for the unshifted path
    if (shift > 0) mask = build_shift_mask<T>(H, W, m, shift).mask;
    logits = ops::add_attention_bias(logits, p.bias_table, relative_index_map(m), mask, nw, heads);
    Tensor<T> ctx = ops::bmm(ops::softmax_lastdim(logits), v, false);
    Tensor<T> out = ops::linear(ops::merge_heads(ctx, heads), p.wo, p.bo);
    Tensor<T> y = ops::window_reverse(out, m, H, W);
    return shift > 0 ? ops::roll(y, shift, shift) : y;
}

template ShiftMask<float> build_shift_mask<float>(i64, i64, i64, i64);
template ShiftMask<double> build_shift_mask<double>(i64, i64, i64, i64);
template Tensor<float> window_attention<float>(const Tensor<float>&, const AttentionParams<float>&,
                                               i64, i64, i64);
template Tensor<double> window_attention<double>(const Tensor<double>&,
                                                 const AttentionParams<double>&, i64, i64, i64);

}  // namespace gshdr
