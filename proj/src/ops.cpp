#include "gshdr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "gshdr/kernels.hpp"

namespace gshdr::ops {

namespace {

template <typename T>
bool tracing(std::initializer_list<const Tensor<T>*> ins) {
    if (!Tape<T>::active()) return false;
    for (const Tensor<T>* t : ins)
        if (t->requires_grad()) return true;
    return false;
}

template <typename T>
bool tracing(const std::vector<Tensor<T>>& ins) {
    if (!Tape<T>::active()) return false;
    for (const Tensor<T>& t : ins)
        if (t.requires_grad()) return true;
    return false;
}

template <typename T>
void record(std::function<void()> fn) {
    Tape<T>::active()->record(std::move(fn));
}

template <typename T>
void need_rank(const Tensor<T>& t, int r, const char* who) {
    if (!t.defined())
        fail(ErrorKind::Shape, std::string(who) + ": undefined tensor");
    if (t.rank() != r)
        fail(ErrorKind::Shape, std::string(who) + ": expected rank " + std::to_string(r) +
                                   ", got shape " + t.shape().str());
}

template <typename T>
void need_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* who) {
    if (!a.defined() || !b.defined())
        fail(ErrorKind::Shape, std::string(who) + ": undefined tensor");
    if (a.shape() != b.shape())
        fail(ErrorKind::Shape, std::string(who) + ": shape mismatch " + a.shape().str() +
                                   " vs " + b.shape().str());
}

// dst[i] += src[i]
template <typename T>
void acc(T* dst, const T* src, i64 n) {
#pragma omp parallel for schedule(static) if (n >= kern::kGrain)
    for (i64 i = 0; i < n; ++i) dst[i] += src[i];
}

}  // namespace

// ---- elementwise -----------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    need_same_shape(a, b, "add");
    Tensor<T> y(a.shape());
    const i64 n = a.numel();
    const T* pa = a.data();
    const T* pb = b.data();
    T* py = y.data();
#pragma omp parallel for schedule(static) if (n >= kern::kGrain)
    for (i64 i = 0; i < n; ++i) py[i] = pa[i] + pb[i];
    if (tracing<T>({&a, &b})) {
        y.set_requires_grad(true);
        record<T>([a = a, b = b, y]() mutable {
            if (!y.has_grad()) return;
            const i64 n = y.numel();
            if (a.requires_grad()) {
                a.ensure_grad();
                acc(a.grad(), y.grad(), n);
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                acc(b.grad(), y.grad(), n);
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    need_same_shape(a, b, "sub");
    Tensor<T> y(a.shape());
    const i64 n = a.numel();
    const T* pa = a.data();
    const T* pb = b.data();
    T* py = y.data();
#pragma omp parallel for schedule(static) if (n >= kern::kGrain)
    for (i64 i = 0; i < n; ++i) py[i] = pa[i] - pb[i];
    if (tracing<T>({&a, &b})) {
        y.set_requires_grad(true);
        record<T>([a = a, b = b, y]() mutable {
            if (!y.has_grad()) return;
            const i64 n = y.numel();
            const T* gy = y.grad();
            if (a.requires_grad()) {
                a.ensure_grad();
                acc(a.grad(), gy, n);
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                T* gb = b.grad();
#pragma omp parallel for schedule(static) if (n >= kern::kGrain)
                for (i64 i = 0; i < n; ++i) gb[i] -= gy[i];
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    need_same_shape(a, b, "mul");
    Tensor<T> y(a.shape());
    const i64 n = a.numel();
    const T* pa = a.data();
    const T* pb = b.data();
    T* py = y.data();
#pragma omp parallel for schedule(static) if (n >= kern::kGrain)
    for (i64 i = 0; i < n; ++i) py[i] = pa[i] * pb[i];
    if (tracing<T>({&a, &b})) {
        y.set_requires_grad(true);
        record<T>([a = a, b = b, y]() mutable {
            if (!y.has_grad()) return;
            const i64 n = y.numel();
            const T* gy = y.grad();
            if (a.requires_grad()) {
                a.ensure_grad();
                T* ga = a.grad();
                const T* pb = b.data();
#pragma omp parallel for schedule(static) if (n >= kern::kGrain)
                for (i64 i = 0; i < n; ++i) ga[i] += gy[i] * pb[i];
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                T* gb = b.grad();
                const T* pa = a.data();
#pragma omp parallel for schedule(static) if (n >= kern::kGrain)
                for (i64 i = 0; i < n; ++i) gb[i] += gy[i] * pa[i];
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    need_same_shape(a, b, "div");
    Tensor<T> y(a.shape());
    const i64 n = a.numel();
    const T* pa = a.data();
    const T* pb = b.data();
    T* py = y.data();
#pragma omp parallel for schedule(static) if (n >= kern::kGrain)
    for (i64 i = 0; i < n; ++i) py[i] = pa[i] / pb[i];
    if (tracing<T>({&a, &b})) {
        y.set_requires_grad(true);
        record<T>([a = a, b = b, y]() mutable {
            if (!y.has_grad()) return;
            const i64 n = y.numel();
            const T* gy = y.grad();
            const T* pb = b.data();
            if (a.requires_grad()) {
                a.ensure_grad();
                T* ga = a.grad();
#pragma omp parallel for schedule(static) if (n >= kern::kGrain)
                for (i64 i = 0; i < n; ++i) ga[i] += gy[i] / pb[i];
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                T* gb = b.grad();
                const T* py = y.data();
#pragma omp parallel for schedule(static) if (n >= kern::kGrain)
                for (i64 i = 0; i < n; ++i) gb[i] -= gy[i] * py[i] / pb[i];
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift) {
    if (!x.defined()) fail(ErrorKind::Shape, "affine: undefined tensor");
    Tensor<T> y(x.shape());
    const i64 n = x.numel();
    const T* px = x.data();
    T* py = y.data();
#pragma omp parallel for schedule(static) if (n >= kern::kGrain)
    for (i64 i = 0; i < n; ++i) py[i] = scale * px[i] + shift;
    if (tracing<T>({&x})) {
        y.set_requires_grad(true);
        record<T>([x = x, y, scale]() mutable {
            if (!y.has_grad() || !x.requires_grad()) return;
            x.ensure_grad();
            T* gx = x.grad();
            const T* gy = y.grad();
            const i64 n = y.numel();
#pragma omp parallel for schedule(static) if (n >= kern::kGrain)
            for (i64 i = 0; i < n; ++i) gx[i] += scale * gy[i];
        });
    }
    return y;
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
    if (!x.defined()) fail(ErrorKind::Shape, "abs: undefined tensor");
    Tensor<T> y(x.shape());
    const i64 n = x.numel();
    const T* px = x.data();
    T* py = y.data();
#pragma omp parallel for schedule(static) if (n >= kern::kGrain)
    for (i64 i = 0; i < n; ++i) py[i] = std::fabs(px[i]);
    if (tracing<T>({&x})) {
        y.set_requires_grad(true);
        record<T>([x = x, y]() mutable {
            if (!y.has_grad() || !x.requires_grad()) return;
            x.ensure_grad();
            T* gx = x.grad();
            const T* gy = y.grad();
            const T* px = x.data();
            const i64 n = y.numel();
#pragma omp parallel for schedule(static) if (n >= kern::kGrain)
            for (i64 i = 0; i < n; ++i) {
                const T s = px[i] > T(0) ? T(1) : (px[i] < T(0) ? T(-1) : T(0));
                gx[i] += s * gy[i];
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    if (!x.defined()) fail(ErrorKind::Shape, "gelu: undefined tensor");
    Tensor<T> y(x.shape());
    kern::gelu(x.data(), y.data(), x.numel());
    if (tracing<T>({&x})) {
        y.set_requires_grad(true);
        record<T>([x = x, y]() mutable {
            if (!y.has_grad() || !x.requires_grad()) return;
            x.ensure_grad();
            kern::gelu_bwd(x.data(), y.grad(), x.grad(), x.numel());
        });
    }
    return y;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    if (!x.defined()) fail(ErrorKind::Shape, "sigmoid: undefined tensor");
    Tensor<T> y(x.shape());
    kern::sigmoid(x.data(), y.data(), x.numel());
    if (tracing<T>({&x})) {
        y.set_requires_grad(true);
        record<T>([x = x, y]() mutable {
            if (!y.has_grad() || !x.requires_grad()) return;
            x.ensure_grad();
            kern::sigmoid_bwd(y.data(), y.grad(), x.grad(), x.numel());
        });
    }
    return y;
}

// ---- reductions ------------------------------------------------------------

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
    if (!x.defined()) fail(ErrorKind::Shape, "mean_all: undefined tensor");
    if (x.numel() == 0) fail(ErrorKind::Shape, "mean_all: empty tensor");
    Tensor<T> y(Shape{1});
    const i64 n = x.numel();
    y.data()[0] = kern::sum_all(x.data(), n) / T(n);
    if (tracing<T>({&x})) {
        y.set_requires_grad(true);
        record<T>([x = x, y, n]() mutable {
            if (!y.has_grad() || !x.requires_grad()) return;
            x.ensure_grad();
            const T g = y.grad()[0] / T(n);
            T* gx = x.grad();
#pragma omp parallel for schedule(static) if (n >= kern::kGrain)
            for (i64 i = 0; i < n; ++i) gx[i] += g;
        });
    }
    return y;
}

// ---- normalization / softmax -----------------------------------------------

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    need_rank(x, 4, "layer_norm");
    need_rank(gamma, 1, "layer_norm gamma");
    need_rank(beta, 1, "layer_norm beta");
    const i64 B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    if (gamma.dim(0) != C || beta.dim(0) != C)
        fail(ErrorKind::Shape, "layer_norm: gamma/beta must have one entry per channel");
    Tensor<T> y(x.shape());
    Tensor<T> mean(Shape{B * HW});
    Tensor<T> rstd(Shape{B * HW});
    kern::layer_norm(x.data(), gamma.data(), beta.data(), y.data(), mean.data(), rstd.data(), B,
                     C, HW, eps);
    if (tracing<T>({&x, &gamma, &beta})) {
        y.set_requires_grad(true);
        record<T>([x = x, gamma = gamma, beta = beta, y, mean, rstd, B, C, HW]() mutable {
            if (!y.has_grad()) return;
            x.ensure_grad();
            gamma.ensure_grad();
            beta.ensure_grad();
            kern::layer_norm_bwd(x.data(), gamma.data(), y.grad(), mean.data(), rstd.data(),
                                 x.grad(), gamma.grad(), beta.grad(), B, C, HW);
        });
    }
    return y;
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
    if (!x.defined() || x.rank() < 2)
        fail(ErrorKind::Shape, "softmax_lastdim: expected rank >= 2");
    const i64 cols = x.dim(x.rank() - 1);
    const i64 rows = x.numel() / cols;
    Tensor<T> y(x.shape());
    kern::softmax_rows(x.data(), y.data(), rows, cols);
    if (tracing<T>({&x})) {
        y.set_requires_grad(true);
        record<T>([x = x, y, rows, cols]() mutable {
            if (!y.has_grad() || !x.requires_grad()) return;
            x.ensure_grad();
            kern::softmax_rows_bwd(y.data(), y.grad(), x.grad(), rows, cols);
        });
    }
    return y;
}

// ---- convolution -----------------------------------------------------------

template <typename T>
Tensor<T> conv_valid(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, bool depthwise) {
    need_rank(x, 4, "conv_valid");
    need_rank(w, 4, "conv_valid weight");
    const i64 B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const i64 K = w.dim(2);
    if (w.dim(3) != K) fail(ErrorKind::Shape, "conv_valid: kernel must be square");
    if (depthwise) {
        if (w.dim(0) != Ci || w.dim(1) != 1)
            fail(ErrorKind::Shape, "conv_valid: depthwise weight must be (C,1,K,K) with C=" +
                                       std::to_string(Ci) + ", got " + w.shape().str());
    } else if (w.dim(1) != Ci) {
        fail(ErrorKind::Shape, "conv_valid: weight input channels " + std::to_string(w.dim(1)) +
                                   " do not match input " + std::to_string(Ci));
    }
    if (H < K || W < K)
        fail(ErrorKind::Shape, "conv_valid: input " + x.shape().str() + " smaller than kernel " +
                                   std::to_string(K));
    const i64 Co = depthwise ? Ci : w.dim(0);
    if (b.defined() && (b.rank() != 1 || b.dim(0) != Co))
        fail(ErrorKind::Shape, "conv_valid: bias must have shape (" + std::to_string(Co) + ")");
    Tensor<T> y(Shape{B, Co, H - K + 1, W - K + 1});
    const T* bp = b.defined() ? b.data() : nullptr;
    if (depthwise)
        kern::conv_dw_valid(x.data(), w.data(), bp, y.data(), B, Ci, H, W, K);
    else
        kern::conv_full_valid(x.data(), w.data(), bp, y.data(), B, Ci, H, W, Co, K);
    if (tracing<T>({&x, &w, &b})) {
        y.set_requires_grad(true);
        record<T>([x = x, w = w, b = b, y, B, Ci, H, W, Co, K, depthwise]() mutable {
            if (!y.has_grad()) return;
            const T* gy = y.grad();
            if (x.requires_grad()) {
                x.ensure_grad();
                if (depthwise)
                    kern::conv_dw_valid_bwd_x(gy, w.data(), x.grad(), B, Ci, H, W, K);
                else
                    kern::conv_full_valid_bwd_x(gy, w.data(), x.grad(), B, Ci, H, W, Co, K);
            }
            if (w.requires_grad()) {
                w.ensure_grad();
                if (depthwise)
                    kern::conv_dw_valid_bwd_w(x.data(), gy, w.grad(), B, Ci, H, W, K);
                else
                    kern::conv_full_valid_bwd_w(x.data(), gy, w.grad(), B, Ci, H, W, Co, K);
            }
            if (b.defined() && b.requires_grad()) {
                b.ensure_grad();
                kern::conv_bwd_bias(gy, b.grad(), B, Co, (H - K + 1) * (W - K + 1));
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, ConvKind kind) {
    need_rank(x, 4, "conv2d");
    need_rank(w, 4, "conv2d weight");
    switch (kind) {
        case ConvKind::Pointwise1x1:
            if (w.dim(2) != 1 || w.dim(3) != 1)
                fail(ErrorKind::Shape, "conv2d: pointwise kind needs a 1x1 kernel, got " +
                                           w.shape().str());
            return conv_valid(x, w, b, false);
        case ConvKind::Depthwise3x3:
            if (w.dim(2) != 3 || w.dim(3) != 3)
                fail(ErrorKind::Shape, "conv2d: depthwise kind needs a 3x3 kernel, got " +
                                           w.shape().str());
            return conv_valid(reflect_pad(x, 1, 1, 1, 1), w, b, true);
        case ConvKind::Full3x3:
            if (w.dim(2) != 3 || w.dim(3) != 3)
                fail(ErrorKind::Shape, "conv2d: full kind needs a 3x3 kernel, got " +
                                           w.shape().str());
            return conv_valid(reflect_pad(x, 1, 1, 1, 1), w, b, false);
    }
    fail(ErrorKind::Config, "conv2d: unknown kind");
}

// ---- shape / layout --------------------------------------------------------

template <typename T>
Tensor<T> reflect_pad(const Tensor<T>& x, i64 top, i64 bottom, i64 left, i64 right) {
    need_rank(x, 4, "reflect_pad");
    if (top < 0 || bottom < 0 || left < 0 || right < 0)
        fail(ErrorKind::Value, "reflect_pad: negative padding");
    const i64 B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor<T> y(Shape{B, C, H + top + bottom, W + left + right});
    kern::reflect_pad(x.data(), y.data(), B, C, H, W, top, bottom, left, right);
    if (tracing<T>({&x})) {
        y.set_requires_grad(true);
        record<T>([x = x, y, B, C, H, W, top, bottom, left, right]() mutable {
            if (!y.has_grad() || !x.requires_grad()) return;
            x.ensure_grad();
            kern::reflect_pad_bwd(y.grad(), x.grad(), B, C, H, W, top, bottom, left, right);
        });
    }
    return y;
}

template <typename T>
Tensor<T> crop(const Tensor<T>& x, i64 top, i64 left, i64 oh, i64 ow) {
    need_rank(x, 4, "crop");
    const i64 B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (top < 0 || left < 0 || oh < 1 || ow < 1 || top + oh > H || left + ow > W)
        fail(ErrorKind::Shape, "crop: window " + std::to_string(oh) + "x" + std::to_string(ow) +
                                   "+" + std::to_string(top) + "+" + std::to_string(left) +
                                   " out of bounds for " + x.shape().str());
    Tensor<T> y(Shape{B, C, oh, ow});
    kern::crop(x.data(), y.data(), B, C, H, W, top, left, oh, ow);
    if (tracing<T>({&x})) {
        y.set_requires_grad(true);
        record<T>([x = x, y, B, C, H, W, top, left, oh, ow]() mutable {
            if (!y.has_grad() || !x.requires_grad()) return;
            x.ensure_grad();
            kern::crop_bwd(y.grad(), x.grad(), B, C, H, W, top, left, oh, ow);
        });
    }
    return y;
}

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, i64 r) {
    need_rank(x, 4, "pixel_unshuffle");
    if (r < 1) fail(ErrorKind::Value, "pixel_unshuffle: factor must be positive");
    const i64 B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % r != 0 || W % r != 0)
        fail(ErrorKind::Shape, "pixel_unshuffle: spatial dims of " + x.shape().str() +
                                   " not divisible by " + std::to_string(r));
    Tensor<T> y(Shape{B, C * r * r, H / r, W / r});
    kern::pixel_unshuffle(x.data(), y.data(), B, C, H, W, r);
    if (tracing<T>({&x})) {
        y.set_requires_grad(true);
        record<T>([x = x, y, B, C, H, W, r]() mutable {
            if (!y.has_grad() || !x.requires_grad()) return;
            x.ensure_grad();
            Tensor<T> tmp(x.shape());
            kern::pixel_shuffle(y.grad(), tmp.data(), B, C * r * r, H / r, W / r, r);
            acc(x.grad(), tmp.data(), x.numel());
        });
    }
    return y;
}

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, i64 r) {
    need_rank(x, 4, "pixel_shuffle");
    if (r < 1) fail(ErrorKind::Value, "pixel_shuffle: factor must be positive");
    const i64 B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (C % (r * r) != 0)
        fail(ErrorKind::Shape, "pixel_shuffle: channels of " + x.shape().str() +
                                   " not divisible by " + std::to_string(r * r));
    Tensor<T> y(Shape{B, C / (r * r), H * r, W * r});
    kern::pixel_shuffle(x.data(), y.data(), B, C, H, W, r);
    if (tracing<T>({&x})) {
        y.set_requires_grad(true);
        record<T>([x = x, y, B, C, H, W, r]() mutable {
            if (!y.has_grad() || !x.requires_grad()) return;
            x.ensure_grad();
            Tensor<T> tmp(x.shape());
            kern::pixel_unshuffle(y.grad(), tmp.data(), B, C / (r * r), H * r, W * r, r);
            acc(x.grad(), tmp.data(), x.numel());
        });
    }
    return y;
}

template <typename T>
Tensor<T> roll(const Tensor<T>& x, i64 sh, i64 sw) {
    need_rank(x, 4, "roll");
    const i64 B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor<T> y(x.shape());
    kern::roll2d(x.data(), y.data(), B, C, H, W, sh, sw);
    if (tracing<T>({&x})) {
        y.set_requires_grad(true);
        record<T>([x = x, y, B, C, H, W, sh, sw]() mutable {
            if (!y.has_grad() || !x.requires_grad()) return;
            x.ensure_grad();
            Tensor<T> tmp(x.shape());
            kern::roll2d(y.grad(), tmp.data(), B, C, H, W, -sh, -sw);
            acc(x.grad(), tmp.data(), x.numel());
        });
    }
    return y;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) fail(ErrorKind::Shape, "concat_channels: no inputs");
    for (const Tensor<T>& t : xs) need_rank(t, 4, "concat_channels");
    const i64 B = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
    i64 Ct = 0;
    for (const Tensor<T>& t : xs) {
        if (t.dim(0) != B || t.dim(2) != H || t.dim(3) != W)
            fail(ErrorKind::Shape, "concat_channels: incompatible shape " + t.shape().str());
        Ct += t.dim(1);
    }
    Tensor<T> y(Shape{B, Ct, H, W});
    const i64 HW = H * W;
    i64 off = 0;
    for (const Tensor<T>& t : xs) {
        const i64 C = t.dim(1);
        const T* px = t.data();
        T* py = y.data();
#pragma omp parallel for collapse(2) schedule(static)
        for (i64 b = 0; b < B; ++b)
            for (i64 c = 0; c < C; ++c)
                std::copy_n(px + (b * C + c) * HW, HW, py + ((b * Ct + off + c)) * HW);
        off += C;
    }
    if (tracing<T>(xs)) {
        y.set_requires_grad(true);
        record<T>([xs = xs, y, B, Ct, HW]() mutable {
            if (!y.has_grad()) return;
            const T* gy = y.grad();
            i64 off = 0;
            for (Tensor<T>& t : xs) {
                const i64 C = t.dim(1);
                if (t.requires_grad()) {
                    t.ensure_grad();
                    T* gx = t.grad();
#pragma omp parallel for collapse(2) schedule(static)
                    for (i64 b = 0; b < B; ++b)
                        for (i64 c = 0; c < C; ++c) {
                            const T* src = gy + (b * Ct + off + c) * HW;
                            T* dst = gx + (b * C + c) * HW;
                            for (i64 p = 0; p < HW; ++p) dst[p] += src[p];
                        }
                }
                off += C;
            }
        });
    }
    return y;
}

// ---- attention building blocks ---------------------------------------------

template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, i64 m) {
    need_rank(x, 4, "window_partition");
    if (m < 1) fail(ErrorKind::Value, "window_partition: window must be positive");
    const i64 B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % m != 0 || W % m != 0)
        fail(ErrorKind::Shape, "window_partition: " + x.shape().str() +
                                   " not divisible into " + std::to_string(m) + "x" +
                                   std::to_string(m) + " windows");
    const i64 nW = (H / m) * (W / m);
    Tensor<T> y(Shape{B * nW, m * m, C});
    kern::window_partition(x.data(), y.data(), B, C, H, W, m);
    if (tracing<T>({&x})) {
        y.set_requires_grad(true);
        record<T>([x = x, y, B, C, H, W, m]() mutable {
            if (!y.has_grad() || !x.requires_grad()) return;
            x.ensure_grad();
            Tensor<T> tmp(x.shape());
            kern::window_reverse(y.grad(), tmp.data(), B, C, H, W, m);
            acc(x.grad(), tmp.data(), x.numel());
        });
    }
    return y;
}

template <typename T>
Tensor<T> window_reverse(const Tensor<T>& x, i64 m, i64 h, i64 w) {
    need_rank(x, 3, "window_reverse");
    if (m < 1 || h < m || w < m || h % m != 0 || w % m != 0)
        fail(ErrorKind::Shape, "window_reverse: canvas " + std::to_string(h) + "x" +
                                   std::to_string(w) + " incompatible with window " +
                                   std::to_string(m));
    const i64 nW = (h / m) * (w / m);
    if (x.dim(1) != m * m || x.dim(0) % nW != 0)
        fail(ErrorKind::Shape, "window_reverse: input " + x.shape().str() +
                                   " does not cover the canvas");
    const i64 B = x.dim(0) / nW, C = x.dim(2);
    Tensor<T> y(Shape{B, C, h, w});
    kern::window_reverse(x.data(), y.data(), B, C, h, w, m);
    if (tracing<T>({&x})) {
        y.set_requires_grad(true);
        record<T>([x = x, y, B, C, h, w, m]() mutable {
            if (!y.has_grad() || !x.requires_grad()) return;
            x.ensure_grad();
            Tensor<T> tmp(x.shape());
            kern::window_partition(y.grad(), tmp.data(), B, C, h, w, m);
            acc(x.grad(), tmp.data(), x.numel());
        });
    }
    return y;
}

template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, i64 heads) {
    need_rank(x, 3, "split_heads");
    const i64 NW = x.dim(0), t = x.dim(1), C = x.dim(2);
    if (heads < 1 || C % heads != 0)
        fail(ErrorKind::Shape, "split_heads: channels " + std::to_string(C) +
                                   " not divisible by heads " + std::to_string(heads));
    Tensor<T> y(Shape{NW * heads, t, C / heads});
    kern::split_heads(x.data(), y.data(), NW, t, C, heads);
    if (tracing<T>({&x})) {
        y.set_requires_grad(true);
        record<T>([x = x, y, NW, t, C, heads]() mutable {
            if (!y.has_grad() || !x.requires_grad()) return;
            x.ensure_grad();
            Tensor<T> tmp(x.shape());
            kern::merge_heads(y.grad(), tmp.data(), NW, t, C, heads);
            acc(x.grad(), tmp.data(), x.numel());
        });
    }
    return y;
}

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x, i64 heads) {
    need_rank(x, 3, "merge_heads");
    const i64 NWh = x.dim(0), t = x.dim(1), dh = x.dim(2);
    if (heads < 1 || NWh % heads != 0)
        fail(ErrorKind::Shape, "merge_heads: batch " + std::to_string(NWh) +
                                   " not divisible by heads " + std::to_string(heads));
    const i64 NW = NWh / heads, C = dh * heads;
    Tensor<T> y(Shape{NW, t, C});
    kern::merge_heads(x.data(), y.data(), NW, t, C, heads);
    if (tracing<T>({&x})) {
        y.set_requires_grad(true);
        record<T>([x = x, y, NW, t, C, heads]() mutable {
            if (!y.has_grad() || !x.requires_grad()) return;
            x.ensure_grad();
            Tensor<T> tmp(x.shape());
            kern::split_heads(y.grad(), tmp.data(), NW, t, C, heads);
            acc(x.grad(), tmp.data(), x.numel());
        });
    }
    return y;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (!x.defined() || (x.rank() != 2 && x.rank() != 3))
        fail(ErrorKind::Shape, "linear: expected rank 2 or 3 input");
    need_rank(w, 2, "linear weight");
    const i64 in = x.dim(x.rank() - 1);
    if (w.dim(0) != in)
        fail(ErrorKind::Shape, "linear: weight " + w.shape().str() +
                                   " does not accept input width " + std::to_string(in));
    const i64 out = w.dim(1);
    if (b.defined() && (b.rank() != 1 || b.dim(0) != out))
        fail(ErrorKind::Shape, "linear: bias must have shape (" + std::to_string(out) + ")");
    const i64 rows = x.numel() / in;
    Tensor<T> y(x.rank() == 3 ? Shape{x.dim(0), x.dim(1), out} : Shape{x.dim(0), out});
    kern::linear(x.data(), w.data(), b.defined() ? b.data() : nullptr, y.data(), rows, in, out);
    if (tracing<T>({&x, &w, &b})) {
        y.set_requires_grad(true);
        record<T>([x = x, w = w, b = b, y, rows, in, out]() mutable {
            if (!y.has_grad()) return;
            const T* gy = y.grad();
            if (x.requires_grad()) {
                x.ensure_grad();
                kern::linear_bwd_x(gy, w.data(), x.grad(), rows, in, out);
            }
            if (w.requires_grad()) {
                w.ensure_grad();
                kern::linear_bwd_w(x.data(), gy, w.grad(), rows, in, out);
            }
            if (b.defined() && b.requires_grad()) {
                b.ensure_grad();
                kern::linear_bwd_b(gy, b.grad(), rows, out);
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
    need_rank(a, 3, "bmm");
    need_rank(b, 3, "bmm");
    const i64 N = a.dim(0), n = a.dim(1), k = a.dim(2);
    if (b.dim(0) != N)
        fail(ErrorKind::Shape, "bmm: batch mismatch " + a.shape().str() + " vs " +
                                   b.shape().str());
    const i64 m = transpose_b ? b.dim(1) : b.dim(2);
    const i64 bk = transpose_b ? b.dim(2) : b.dim(1);
    if (bk != k)
        fail(ErrorKind::Shape, "bmm: inner dim mismatch " + a.shape().str() + " vs " +
                                   b.shape().str());
    Tensor<T> y(Shape{N, n, m});
    kern::bmm_acc(a.data(), b.data(), y.data(), N, n, k, m, false, transpose_b);
    if (tracing<T>({&a, &b})) {
        y.set_requires_grad(true);
        record<T>([a = a, b = b, y, N, n, k, m, transpose_b]() mutable {
            if (!y.has_grad()) return;
            const T* gy = y.grad();
            if (a.requires_grad()) {
                a.ensure_grad();
                // d a = gy . b^T   (or gy . b when b was transposed)
                kern::bmm_acc(gy, b.data(), a.grad(), N, n, m, k, false, !transpose_b);
            }
            if (b.requires_grad()) {
                b.ensure_grad();
                if (transpose_b)
                    // d b = gy^T . a
                    kern::bmm_acc(gy, a.data(), b.grad(), N, m, n, k, true, false);
                else
                    // d b = a^T . gy
                    kern::bmm_acc(a.data(), gy, b.grad(), N, k, n, m, true, false);
            }
        });
    }
    return y;
}

template <typename T>
Tensor<T> add_attention_bias(const Tensor<T>& logits, const Tensor<T>& table,
                             const std::vector<std::int32_t>& index, const Tensor<T>& mask,
                             i64 n_windows, i64 heads) {
    need_rank(logits, 3, "add_attention_bias");
    need_rank(table, 2, "add_attention_bias table");
    const i64 t = logits.dim(1);
    if (logits.dim(2) != t) fail(ErrorKind::Shape, "add_attention_bias: logits must be square");
    if (heads < 1 || table.dim(0) != heads)
        fail(ErrorKind::Shape, "add_attention_bias: table rows must equal head count");
    if (logits.dim(0) % (n_windows * heads) != 0)
        fail(ErrorKind::Shape, "add_attention_bias: logit batch " +
                                   std::to_string(logits.dim(0)) + " incompatible with " +
                                   std::to_string(n_windows) + " windows x " +
                                   std::to_string(heads) + " heads");
    if (static_cast<i64>(index.size()) != t * t)
        fail(ErrorKind::Shape, "add_attention_bias: index must hold one entry per token pair");
    const i64 entries = table.dim(1);
    for (const std::int32_t v : index)
        if (v < 0 || v >= entries)
            fail(ErrorKind::Value, "add_attention_bias: index entry out of table range");
    if (mask.defined() &&
        (mask.rank() != 3 || mask.dim(0) != n_windows || mask.dim(1) != t || mask.dim(2) != t))
        fail(ErrorKind::Shape, "add_attention_bias: mask must be (windows, t, t)");
    const i64 BnW = logits.dim(0) / heads;
    Tensor<T> y = logits.clone();
    kern::add_attn_bias(y.data(), table.data(), index.data(),
                        mask.defined() ? mask.data() : nullptr, BnW, n_windows, heads, t,
                        entries);
    if (tracing<T>({&logits, &table})) {
        y.set_requires_grad(true);
        std::vector<std::int32_t> idx = index;
        record<T>([logits = logits, table = table, y, idx = std::move(idx), BnW, heads, t, entries]() mutable {
            if (!y.has_grad()) return;
            if (logits.requires_grad()) {
                logits.ensure_grad();
                acc(logits.grad(), y.grad(), y.numel());
            }
            if (table.requires_grad()) {
                table.ensure_grad();
                kern::add_attn_bias_bwd(y.grad(), table.grad(), idx.data(), BnW, heads, t,
                                        entries);
            }
        });
    }
    return y;
}

// ---- misc ------------------------------------------------------------------

template <typename T>
Tensor<T> mu_law(const Tensor<T>& x, T mu, bool strict) {
    if (!x.defined()) fail(ErrorKind::Shape, "mu_law: undefined tensor");
    if (!(mu > T(0))) fail(ErrorKind::Value, "mu_law: mu must be positive");
    const i64 n = x.numel();
    const T* px = x.data();
    if (strict) {
        for (i64 i = 0; i < n; ++i)
            if (!(px[i] >= T(0) && px[i] <= T(1)))
                fail(ErrorKind::Value, "mu_law: input outside [0, 1] at flat index " +
                                           std::to_string(i));
    }
    Tensor<T> y(x.shape());
    T* py = y.data();
    // Division keeps the endpoints exact for any mu: log1p(mu)/log1p(mu) is
    // always 1, which a multiply by the rounded reciprocal cannot promise.
    const T ln_mu = std::log1p(mu);
    const T inv_ln = T(1) / ln_mu;
#pragma omp parallel for schedule(static) if (n >= kern::kGrain)
    for (i64 i = 0; i < n; ++i) {
        const T xc = strict ? px[i] : std::clamp(px[i], T(0), T(1));
        py[i] = std::log1p(mu * xc) / ln_mu;
    }
    if (tracing<T>({&x})) {
        y.set_requires_grad(true);
        record<T>([x = x, y, mu, inv_ln, strict]() mutable {
            if (!y.has_grad() || !x.requires_grad()) return;
            x.ensure_grad();
            const T* px = x.data();
            const T* gy = y.grad();
            T* gx = x.grad();
            const i64 n = x.numel();
#pragma omp parallel for schedule(static) if (n >= kern::kGrain)
            for (i64 i = 0; i < n; ++i) {
                if (!strict && (px[i] < T(0) || px[i] > T(1))) continue;
                gx[i] += gy[i] * mu * inv_ln / (T(1) + mu * px[i]);
            }
        });
    }
    return y;
}

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& x) {
    if (!x.defined()) fail(ErrorKind::Shape, "cast: undefined tensor");
    Tensor<To> y(x.shape());
    const i64 n = x.numel();
    const From* px = x.data();
    To* py = y.data();
#pragma omp parallel for schedule(static) if (n >= kern::kGrain)
    for (i64 i = 0; i < n; ++i) py[i] = static_cast<To>(px[i]);
    return y;
}

// ---- explicit instantiations ------------------------------------------------

#define GSHDR_INSTANTIATE_OPS(T)                                                               \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> affine<T>(const Tensor<T>&, T, T);                                      \
    template Tensor<T> abs<T>(const Tensor<T>&);                                               \
    template Tensor<T> gelu<T>(const Tensor<T>&);                                              \
    template Tensor<T> sigmoid<T>(const Tensor<T>&);                                           \
    template Tensor<T> mean_all<T>(const Tensor<T>&);                                          \
    template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T); \
    template Tensor<T> softmax_lastdim<T>(const Tensor<T>&);                                   \
    template Tensor<T> conv_valid<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                     bool);                                                    \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                 ConvKind);                                                    \
    template Tensor<T> reflect_pad<T>(const Tensor<T>&, i64, i64, i64, i64);                   \
    template Tensor<T> crop<T>(const Tensor<T>&, i64, i64, i64, i64);                          \
    template Tensor<T> pixel_unshuffle<T>(const Tensor<T>&, i64);                              \
    template Tensor<T> pixel_shuffle<T>(const Tensor<T>&, i64);                                \
    template Tensor<T> roll<T>(const Tensor<T>&, i64, i64);                                    \
    template Tensor<T> concat_channels<T>(const std::vector<Tensor<T>>&);                      \
    template Tensor<T> window_partition<T>(const Tensor<T>&, i64);                             \
    template Tensor<T> window_reverse<T>(const Tensor<T>&, i64, i64, i64);                     \
    template Tensor<T> split_heads<T>(const Tensor<T>&, i64);                                  \
    template Tensor<T> merge_heads<T>(const Tensor<T>&, i64);                                  \
    template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);        \
    template Tensor<T> bmm<T>(const Tensor<T>&, const Tensor<T>&, bool);                       \
    template Tensor<T> add_attention_bias<T>(const Tensor<T>&, const Tensor<T>&,               \
                                             const std::vector<std::int32_t>&,                 \
                                             const Tensor<T>&, i64, i64);                      \
    template Tensor<T> mu_law<T>(const Tensor<T>&, T, bool);

GSHDR_INSTANTIATE_OPS(float)
GSHDR_INSTANTIATE_OPS(double)
#undef GSHDR_INSTANTIATE_OPS

template Tensor<double> cast<double, float>(const Tensor<float>&);
template Tensor<float> cast<float, double>(const Tensor<double>&);
template Tensor<double> cast<double, double>(const Tensor<double>&);
template Tensor<float> cast<float, float>(const Tensor<float>&);

}  // namespace gshdr::ops
