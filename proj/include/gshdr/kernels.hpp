#pragma once

// Low-level OpenMP-parallel kernels. All loops write disjoint output ranges
// and keep per-element arithmetic in a fixed serial order, so results are
// bit-identical for any thread count. Backward kernels accumulate (+=) into
// caller-zeroed buffers and are formulated as gathers, never cross-thread
// scatters.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gshdr::kern {

using i64 = std::int64_t;

// Elementwise ops below this size run serially; the parallel region is not
// worth entering.
constexpr i64 kGrain = 1 << 14;

inline i64 reflect_index(i64 i, i64 n) {
    if (n == 1) return 0;
    const i64 period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
void gelu(const T* x, T* y, i64 n) {
    const T inv_sqrt2 = T(0.7071067811865475244);
#pragma omp parallel for schedule(static) if (n >= kGrain)
    for (i64 i = 0; i < n; ++i) {
        const T cdf = T(0.5) * (T(1) + std::erf(x[i] * inv_sqrt2));
        y[i] = x[i] * cdf;
    }
}

template <typename T>
void gelu_bwd(const T* x, const T* gy, T* gx, i64 n) {
    const T inv_sqrt2 = T(0.7071067811865475244);
    const T inv_sqrt2pi = T(0.3989422804014326779);
#pragma omp parallel for schedule(static) if (n >= kGrain)
    for (i64 i = 0; i < n; ++i) {
        const T cdf = T(0.5) * (T(1) + std::erf(x[i] * inv_sqrt2));
        const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x[i] * x[i]);
        gx[i] += gy[i] * (cdf + x[i] * pdf);
    }
}

template <typename T>
void sigmoid(const T* x, T* y, i64 n) {
#pragma omp parallel for schedule(static) if (n >= kGrain)
    for (i64 i = 0; i < n; ++i) y[i] = T(1) / (T(1) + std::exp(-x[i]));
}

template <typename T>
void sigmoid_bwd(const T* y, const T* gy, T* gx, i64 n) {
#pragma omp parallel for schedule(static) if (n >= kGrain)
    for (i64 i = 0; i < n; ++i) gx[i] += gy[i] * y[i] * (T(1) - y[i]);
}

// Fixed-chunk partial sums; the combine order never depends on the thread
// count, so the total is bit-stable.
template <typename T>
T sum_all(const T* x, i64 n) {
    constexpr i64 chunk = 4096;
    const i64 nchunks = (n + chunk - 1) / chunk;
    std::vector<T> partial(static_cast<std::size_t>(nchunks), T(0));
#pragma omp parallel for schedule(static) if (n >= kGrain)
    for (i64 c = 0; c < nchunks; ++c) {
        const i64 lo = c * chunk, hi = std::min(n, lo + chunk);
        T s = T(0);
        for (i64 i = lo; i < hi; ++i) s += x[i];
        partial[static_cast<std::size_t>(c)] = s;
    }
    T total = T(0);
    for (i64 c = 0; c < nchunks; ++c) total += partial[static_cast<std::size_t>(c)];
    return total;
}

// ---------------------------------------------------------------------------
// convolutions (valid, stride 1, odd square kernel)
// ---------------------------------------------------------------------------

// x (B,Ci,H,W) * w (Co,Ci,K,K) -> y (B,Co,H-K+1,W-K+1)
template <typename T>
void conv_full_valid(const T* x, const T* w, const T* bias, T* y, i64 B, i64 Ci, i64 H, i64 W,
                     i64 Co, i64 K) {
    const i64 OH = H - K + 1, OW = W - K + 1;
#pragma omp parallel for collapse(2) schedule(static)
    for (i64 b = 0; b < B; ++b) {
        for (i64 co = 0; co < Co; ++co) {
            T* yc = y + (b * Co + co) * OH * OW;
            const T init = bias ? bias[co] : T(0);
            std::fill(yc, yc + OH * OW, init);
            for (i64 ci = 0; ci < Ci; ++ci) {
                const T* xc = x + (b * Ci + ci) * H * W;
                const T* wc = w + (co * Ci + ci) * K * K;
                for (i64 ky = 0; ky < K; ++ky) {
                    for (i64 kx = 0; kx < K; ++kx) {
                        const T wv = wc[ky * K + kx];
                        for (i64 oy = 0; oy < OH; ++oy) {
                            const T* xrow = xc + (oy + ky) * W + kx;
                            T* yrow = yc + oy * OW;
                            for (i64 ox = 0; ox < OW; ++ox) yrow[ox] += wv * xrow[ox];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv_full_valid_bwd_x(const T* gy, const T* w, T* gx, i64 B, i64 Ci, i64 H, i64 W, i64 Co,
                           i64 K) {
    const i64 OH = H - K + 1, OW = W - K + 1;
#pragma omp parallel for collapse(2) schedule(static)
    for (i64 b = 0; b < B; ++b) {
        for (i64 ci = 0; ci < Ci; ++ci) {
            T* gxc = gx + (b * Ci + ci) * H * W;
            for (i64 co = 0; co < Co; ++co) {
                const T* gyc = gy + (b * Co + co) * OH * OW;
                const T* wc = w + (co * Ci + ci) * K * K;
                for (i64 ky = 0; ky < K; ++ky) {
                    for (i64 kx = 0; kx < K; ++kx) {
                        const T wv = wc[ky * K + kx];
                        for (i64 oy = 0; oy < OH; ++oy) {
                            const T* gyrow = gyc + oy * OW;
                            T* gxrow = gxc + (oy + ky) * W + kx;
                            for (i64 ox = 0; ox < OW; ++ox) gxrow[ox] += wv * gyrow[ox];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv_full_valid_bwd_w(const T* x, const T* gy, T* gw, i64 B, i64 Ci, i64 H, i64 W, i64 Co,
                           i64 K) {
    const i64 OH = H - K + 1, OW = W - K + 1;
#pragma omp parallel for collapse(2) schedule(static)
    for (i64 co = 0; co < Co; ++co) {
        for (i64 ci = 0; ci < Ci; ++ci) {
            T* gwc = gw + (co * Ci + ci) * K * K;
            for (i64 ky = 0; ky < K; ++ky) {
                for (i64 kx = 0; kx < K; ++kx) {
                    T acc = T(0);
                    for (i64 b = 0; b < B; ++b) {
                        const T* gyc = gy + (b * Co + co) * OH * OW;
                        const T* xc = x + (b * Ci + ci) * H * W;
                        for (i64 oy = 0; oy < OH; ++oy) {
                            const T* gyrow = gyc + oy * OW;
                            const T* xrow = xc + (oy + ky) * W + kx;
                            for (i64 ox = 0; ox < OW; ++ox) acc += gyrow[ox] * xrow[ox];
                        }
                    }
                    gwc[ky * K + kx] += acc;
                }
            }
        }
    }
}

// x (B,C,H,W) * w (C,1,K,K) -> y (B,C,H-K+1,W-K+1), one filter per channel
template <typename T>
void conv_dw_valid(const T* x, const T* w, const T* bias, T* y, i64 B, i64 C, i64 H, i64 W,
                   i64 K) {
    const i64 OH = H - K + 1, OW = W - K + 1;
#pragma omp parallel for collapse(2) schedule(static)
    for (i64 b = 0; b < B; ++b) {
        for (i64 c = 0; c < C; ++c) {
            T* yc = y + (b * C + c) * OH * OW;
            const T* xc = x + (b * C + c) * H * W;
            const T* wc = w + c * K * K;
            std::fill(yc, yc + OH * OW, bias ? bias[c] : T(0));
            for (i64 ky = 0; ky < K; ++ky) {
                for (i64 kx = 0; kx < K; ++kx) {
                    const T wv = wc[ky * K + kx];
                    for (i64 oy = 0; oy < OH; ++oy) {
                        const T* xrow = xc + (oy + ky) * W + kx;
                        T* yrow = yc + oy * OW;
                        for (i64 ox = 0; ox < OW; ++ox) yrow[ox] += wv * xrow[ox];
                    }
                }
            }
        }
    }
}

template <typename T>
void conv_dw_valid_bwd_x(const T* gy, const T* w, T* gx, i64 B, i64 C, i64 H, i64 W, i64 K) {
    const i64 OH = H - K + 1, OW = W - K + 1;
#pragma omp parallel for collapse(2) schedule(static)
    for (i64 b = 0; b < B; ++b) {
        for (i64 c = 0; c < C; ++c) {
            T* gxc = gx + (b * C + c) * H * W;
            const T* gyc = gy + (b * C + c) * OH * OW;
            const T* wc = w + c * K * K;
            for (i64 ky = 0; ky < K; ++ky) {
                for (i64 kx = 0; kx < K; ++kx) {
                    const T wv = wc[ky * K + kx];
                    for (i64 oy = 0; oy < OH; ++oy) {
                        const T* gyrow = gyc + oy * OW;
                        T* gxrow = gxc + (oy + ky) * W + kx;
                        for (i64 ox = 0; ox < OW; ++ox) gxrow[ox] += wv * gyrow[ox];
                    }
                }
            }
        }
    }
}

template <typename T>
void conv_dw_valid_bwd_w(const T* x, const T* gy, T* gw, i64 B, i64 C, i64 H, i64 W, i64 K) {
    const i64 OH = H - K + 1, OW = W - K + 1;
#pragma omp parallel for schedule(static)
    for (i64 c = 0; c < C; ++c) {
        T* gwc = gw + c * K * K;
        for (i64 ky = 0; ky < K; ++ky) {
            for (i64 kx = 0; kx < K; ++kx) {
                T acc = T(0);
                for (i64 b = 0; b < B; ++b) {
                    const T* gyc = gy + (b * C + c) * OH * OW;
                    const T* xc = x + (b * C + c) * H * W;
                    for (i64 oy = 0; oy < OH; ++oy) {
                        const T* gyrow = gyc + oy * OW;
                        const T* xrow = xc + (oy + ky) * W + kx;
                        for (i64 ox = 0; ox < OW; ++ox) acc += gyrow[ox] * xrow[ox];
                    }
                }
                gwc[ky * K + kx] += acc;
            }
        }
    }
}

// per-output-channel sum of gy over batch and space
template <typename T>
void conv_bwd_bias(const T* gy, T* gb, i64 B, i64 Co, i64 HW) {
#pragma omp parallel for schedule(static)
    for (i64 co = 0; co < Co; ++co) {
        T acc = T(0);
        for (i64 b = 0; b < B; ++b) {
            const T* gyc = gy + (b * Co + co) * HW;
            for (i64 p = 0; p < HW; ++p) acc += gyc[p];
        }
        gb[co] += acc;
    }
}

// x (B,Ci,HW) * w (Co,Ci) -> y (B,Co,HW); the 1x1 convolution fast path
template <typename T>
void conv_pointwise(const T* x, const T* w, const T* bias, T* y, i64 B, i64 Ci, i64 HW, i64 Co) {
#pragma omp parallel for collapse(2) schedule(static)
    for (i64 b = 0; b < B; ++b) {
        for (i64 co = 0; co < Co; ++co) {
            T* yc = y + (b * Co + co) * HW;
            std::fill(yc, yc + HW, bias ? bias[co] : T(0));
            const T* wr = w + co * Ci;
            for (i64 ci = 0; ci < Ci; ++ci) {
                const T wv = wr[ci];
                const T* xc = x + (b * Ci + ci) * HW;
                for (i64 p = 0; p < HW; ++p) yc[p] += wv * xc[p];
            }
        }
    }
}

template <typename T>
void conv_pointwise_bwd_x(const T* gy, const T* w, T* gx, i64 B, i64 Ci, i64 HW, i64 Co) {
#pragma omp parallel for collapse(2) schedule(static)
    for (i64 b = 0; b < B; ++b) {
        for (i64 ci = 0; ci < Ci; ++ci) {
            T* gxc = gx + (b * Ci + ci) * HW;
            for (i64 co = 0; co < Co; ++co) {
                const T wv = w[co * Ci + ci];
                const T* gyc = gy + (b * Co + co) * HW;
                for (i64 p = 0; p < HW; ++p) gxc[p] += wv * gyc[p];
            }
        }
    }
}

template <typename T>
void conv_pointwise_bwd_w(const T* x, const T* gy, T* gw, i64 B, i64 Ci, i64 HW, i64 Co) {
#pragma omp parallel for collapse(2) schedule(static)
    for (i64 co = 0; co < Co; ++co) {
        for (i64 ci = 0; ci < Ci; ++ci) {
            T acc = T(0);
            for (i64 b = 0; b < B; ++b) {
                const T* gyc = gy + (b * Co + co) * HW;
                const T* xc = x + (b * Ci + ci) * HW;
                for (i64 p = 0; p < HW; ++p) acc += gyc[p] * xc[p];
            }
            gw[co * Ci + ci] += acc;
        }
    }
}

// ---------------------------------------------------------------------------
// padding / cropping
// ---------------------------------------------------------------------------

// Reflected (mirror, edge not repeated) border extension; arbitrary pad
// sizes are handled by periodic folding.
template <typename T>
void reflect_pad(const T* x, T* y, i64 B, i64 C, i64 H, i64 W, i64 top, i64 bottom, i64 left,
                 i64 right) {
    const i64 OH = H + top + bottom, OW = W + left + right;
#pragma omp parallel for collapse(2) schedule(static)
    for (i64 b = 0; b < B; ++b) {
        for (i64 c = 0; c < C; ++c) {
            const T* xc = x + (b * C + c) * H * W;
            T* yc = y + (b * C + c) * OH * OW;
            for (i64 oy = 0; oy < OH; ++oy) {
                const i64 iy = reflect_index(oy - top, H);
                for (i64 ox = 0; ox < OW; ++ox)
                    yc[oy * OW + ox] = xc[iy * W + reflect_index(ox - left, W)];
            }
        }
    }
}

// Scatter stays inside one (b,c) slice, serial there, so accumulation order
// is fixed.
template <typename T>
void reflect_pad_bwd(const T* gy, T* gx, i64 B, i64 C, i64 H, i64 W, i64 top, i64 bottom,
                     i64 left, i64 right) {
    const i64 OH = H + top + bottom, OW = W + left + right;
#pragma omp parallel for collapse(2) schedule(static)
    for (i64 b = 0; b < B; ++b) {
        for (i64 c = 0; c < C; ++c) {
            const T* gyc = gy + (b * C + c) * OH * OW;
            T* gxc = gx + (b * C + c) * H * W;
            for (i64 oy = 0; oy < OH; ++oy) {
                const i64 iy = reflect_index(oy - top, H);
                for (i64 ox = 0; ox < OW; ++ox)
                    gxc[iy * W + reflect_index(ox - left, W)] += gyc[oy * OW + ox];
            }
        }
    }
}

template <typename T>
void crop(const T* x, T* y, i64 B, i64 C, i64 H, i64 W, i64 top, i64 left, i64 oh, i64 ow) {
#pragma omp parallel for collapse(2) schedule(static)
    for (i64 b = 0; b < B; ++b) {
        for (i64 c = 0; c < C; ++c) {
            const T* xc = x + (b * C + c) * H * W;
            T* yc = y + (b * C + c) * oh * ow;
            for (i64 oy = 0; oy < oh; ++oy)
                std::copy_n(xc + (top + oy) * W + left, ow, yc + oy * ow);
        }
    }
}

template <typename T>
void crop_bwd(const T* gy, T* gx, i64 B, i64 C, i64 H, i64 W, i64 top, i64 left, i64 oh, i64 ow) {
#pragma omp parallel for collapse(2) schedule(static)
    for (i64 b = 0; b < B; ++b) {
        for (i64 c = 0; c < C; ++c) {
            const T* gyc = gy + (b * C + c) * oh * ow;
            T* gxc = gx + (b * C + c) * H * W;
            for (i64 oy = 0; oy < oh; ++oy) {
                const T* grow = gyc + oy * ow;
                T* xrow = gxc + (top + oy) * W + left;
                for (i64 ox = 0; ox < ow; ++ox) xrow[ox] += grow[ox];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// normalization / softmax
// ---------------------------------------------------------------------------

// Normalizes over the channel axis at each spatial position.
template <typename T>
void layer_norm(const T* x, const T* gamma, const T* beta, T* y, T* save_mean, T* save_rstd,
                i64 B, i64 C, i64 HW, T eps) {
    const i64 P = B * HW;
#pragma omp parallel for schedule(static)
    for (i64 p = 0; p < P; ++p) {
        const i64 b = p / HW, pos = p % HW;
        const T* xp = x + b * C * HW + pos;
        T mean = T(0);
        for (i64 c = 0; c < C; ++c) mean += xp[c * HW];
        mean /= T(C);
        T var = T(0);
        for (i64 c = 0; c < C; ++c) {
            const T d = xp[c * HW] - mean;
            var += d * d;
        }
        var /= T(C);
        save_mean[p] = mean;
        save_rstd[p] = T(1) / std::sqrt(var + eps);
    }
#pragma omp parallel for collapse(2) schedule(static)
    for (i64 b = 0; b < B; ++b) {
        for (i64 c = 0; c < C; ++c) {
            const T* xc = x + (b * C + c) * HW;
            T* yc = y + (b * C + c) * HW;
            const T g = gamma[c], bt = beta[c];
            const T* mrow = save_mean + b * HW;
            const T* rrow = save_rstd + b * HW;
            for (i64 pos = 0; pos < HW; ++pos) yc[pos] = (xc[pos] - mrow[pos]) * rrow[pos] * g + bt;
        }
    }
}

template <typename T>
void layer_norm_bwd(const T* x, const T* gamma, const T* gy, const T* save_mean,
                    const T* save_rstd, T* gx, T* ggamma, T* gbeta, i64 B, i64 C, i64 HW) {
    const i64 P = B * HW;
#pragma omp parallel for schedule(static)
    for (i64 p = 0; p < P; ++p) {
        const i64 b = p / HW, pos = p % HW;
        const T* xp = x + b * C * HW + pos;
        const T* gyp = gy + b * C * HW + pos;
        T* gxp = gx + b * C * HW + pos;
        const T mean = save_mean[p], rstd = save_rstd[p];
        T sum_g = T(0), sum_gx = T(0);
        for (i64 c = 0; c < C; ++c) {
            const T gg = gyp[c * HW] * gamma[c];
            sum_g += gg;
            sum_gx += gg * (xp[c * HW] - mean) * rstd;
        }
        const T inv_c = T(1) / T(C);
        for (i64 c = 0; c < C; ++c) {
            const T gg = gyp[c * HW] * gamma[c];
            const T xhat = (xp[c * HW] - mean) * rstd;
            gxp[c * HW] += rstd * (gg - sum_g * inv_c - xhat * sum_gx * inv_c);
        }
    }
#pragma omp parallel for schedule(static)
    for (i64 c = 0; c < C; ++c) {
        T acc_g = T(0), acc_b = T(0);
        for (i64 b = 0; b < B; ++b) {
            const T* xc = x + (b * C + c) * HW;
            const T* gyc = gy + (b * C + c) * HW;
            const T* mrow = save_mean + b * HW;
            const T* rrow = save_rstd + b * HW;
            for (i64 pos = 0; pos < HW; ++pos) {
                acc_g += gyc[pos] * (xc[pos] - mrow[pos]) * rrow[pos];
                acc_b += gyc[pos];
            }
        }
        ggamma[c] += acc_g;
        gbeta[c] += acc_b;
    }
}

// Max-subtracted softmax over the trailing axis.
template <typename T>
void softmax_rows(const T* x, T* y, i64 rows, i64 cols) {
#pragma omp parallel for schedule(static)
    for (i64 r = 0; r < rows; ++r) {
        const T* xr = x + r * cols;
        T* yr = y + r * cols;
        T mx = xr[0];
        for (i64 c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
        T sum = T(0);
        for (i64 c = 0; c < cols; ++c) {
            yr[c] = std::exp(xr[c] - mx);
            sum += yr[c];
        }
        const T inv = T(1) / sum;
        for (i64 c = 0; c < cols; ++c) yr[c] *= inv;
    }
}

template <typename T>
void softmax_rows_bwd(const T* y, const T* gy, T* gx, i64 rows, i64 cols) {
#pragma omp parallel for schedule(static)
    for (i64 r = 0; r < rows; ++r) {
        const T* yr = y + r * cols;
        const T* gr = gy + r * cols;
        T* gxr = gx + r * cols;
        T dot = T(0);
        for (i64 c = 0; c < cols; ++c) dot += yr[c] * gr[c];
        for (i64 c = 0; c < cols; ++c) gxr[c] += yr[c] * (gr[c] - dot);
    }
}

// ---------------------------------------------------------------------------
// matrix products
// ---------------------------------------------------------------------------

// y[r,o] = sum_i x[r,i] w[i,o] + b[o]
template <typename T>
void linear(const T* x, const T* w, const T* b, T* y, i64 rows, i64 in, i64 out) {
#pragma omp parallel for schedule(static)
    for (i64 r = 0; r < rows; ++r) {
        const T* xr = x + r * in;
        T* yr = y + r * out;
        if (b)
            std::copy_n(b, out, yr);
        else
            std::fill(yr, yr + out, T(0));
        for (i64 i = 0; i < in; ++i) {
            const T xv = xr[i];
            const T* wr = w + i * out;
            for (i64 o = 0; o < out; ++o) yr[o] += xv * wr[o];
        }
    }
}

template <typename T>
void linear_bwd_x(const T* gy, const T* w, T* gx, i64 rows, i64 in, i64 out) {
#pragma omp parallel for schedule(static)
    for (i64 r = 0; r < rows; ++r) {
        const T* gr = gy + r * out;
        T* gxr = gx + r * in;
        for (i64 i = 0; i < in; ++i) {
            const T* wr = w + i * out;
            T acc = T(0);
            for (i64 o = 0; o < out; ++o) acc += gr[o] * wr[o];
            gxr[i] += acc;
        }
    }
}

template <typename T>
void linear_bwd_w(const T* x, const T* gy, T* gw, i64 rows, i64 in, i64 out) {
#pragma omp parallel for schedule(static)
    for (i64 i = 0; i < in; ++i) {
        T* gwr = gw + i * out;
        for (i64 r = 0; r < rows; ++r) {
            const T xv = x[r * in + i];
            const T* gr = gy + r * out;
            for (i64 o = 0; o < out; ++o) gwr[o] += xv * gr[o];
        }
    }
}

template <typename T>
void linear_bwd_b(const T* gy, T* gb, i64 rows, i64 out) {
#pragma omp parallel for schedule(static)
    for (i64 o = 0; o < out; ++o) {
        T acc = T(0);
        for (i64 r = 0; r < rows; ++r) acc += gy[r * out + o];
        gb[o] += acc;
    }
}

// y += op(a) . op(b) per batch; a is (n,k) or transposed (k,n), b is (k,m)
// or transposed (m,k). Covers every transpose combination the attention
// forward and backward passes need.
template <typename T>
void bmm_acc(const T* a, const T* b, T* y, i64 nb, i64 n, i64 k, i64 m, bool a_t, bool b_t) {
#pragma omp parallel for collapse(2) schedule(static)
    for (i64 w = 0; w < nb; ++w) {
        for (i64 i = 0; i < n; ++i) {
            const T* aw = a + w * n * k;
            const T* bw = b + w * k * m;
            T* yr = y + (w * n + i) * m;
            for (i64 l = 0; l < k; ++l) {
                const T av = a_t ? aw[l * n + i] : aw[i * k + l];
                if (b_t) {
                    // bw rows are m-major: bw[j*k + l]
                    for (i64 j = 0; j < m; ++j) yr[j] += av * bw[j * k + l];
                } else {
                    const T* brow = bw + l * m;
                    for (i64 j = 0; j < m; ++j) yr[j] += av * brow[j];
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// data movement
// ---------------------------------------------------------------------------

// (B,C,H,W) -> (B,C*r*r,H/r,W/r); output channel c*r*r + dy*r + dx
template <typename T>
void pixel_unshuffle(const T* x, T* y, i64 B, i64 C, i64 H, i64 W, i64 r) {
    const i64 OH = H / r, OW = W / r, Co = C * r * r;
#pragma omp parallel for collapse(2) schedule(static)
    for (i64 b = 0; b < B; ++b) {
        for (i64 co = 0; co < Co; ++co) {
            const i64 c = co / (r * r), dy = (co / r) % r, dx = co % r;
            const T* xc = x + (b * C + c) * H * W;
            T* yc = y + (b * Co + co) * OH * OW;
            for (i64 oy = 0; oy < OH; ++oy)
                for (i64 ox = 0; ox < OW; ++ox) yc[oy * OW + ox] = xc[(oy * r + dy) * W + ox * r + dx];
        }
    }
}

// exact inverse of pixel_unshuffle
template <typename T>
void pixel_shuffle(const T* x, T* y, i64 B, i64 C, i64 H, i64 W, i64 r) {
    const i64 Co = C / (r * r), OH = H * r, OW = W * r;
#pragma omp parallel for collapse(2) schedule(static)
    for (i64 b = 0; b < B; ++b) {
        for (i64 c = 0; c < C; ++c) {
            const i64 co = c / (r * r), dy = (c / r) % r, dx = c % r;
            const T* xc = x + (b * C + c) * H * W;
            T* yc = y + (b * Co + co) * OH * OW;
            for (i64 iy = 0; iy < H; ++iy)
                for (i64 ix = 0; ix < W; ++ix) yc[(iy * r + dy) * OW + ix * r + dx] = xc[iy * W + ix];
        }
    }
}

// x[..., i, j] moves to [..., (i+sh) mod H, (j+sw) mod W]
template <typename T>
void roll2d(const T* x, T* y, i64 B, i64 C, i64 H, i64 W, i64 sh, i64 sw) {
    sh = ((sh % H) + H) % H;
    sw = ((sw % W) + W) % W;
#pragma omp parallel for collapse(2) schedule(static)
    for (i64 b = 0; b < B; ++b) {
        for (i64 c = 0; c < C; ++c) {
            const T* xc = x + (b * C + c) * H * W;
            T* yc = y + (b * C + c) * H * W;
            for (i64 oy = 0; oy < H; ++oy) {
                const i64 iy = (oy - sh + H) % H;
                const T* xrow = xc + iy * W;
                T* yrow = yc + oy * W;
                for (i64 ox = 0; ox < W; ++ox) yrow[ox] = xrow[(ox - sw + W) % W];
            }
        }
    }
}

// (B,C,H,W) -> (B*nW, M*M, C) with windows and in-window tokens row-major
template <typename T>
void window_partition(const T* x, T* y, i64 B, i64 C, i64 H, i64 W, i64 M) {
    const i64 Wn = W / M, nW = (H / M) * Wn, t = M * M;
#pragma omp parallel for collapse(2) schedule(static)
    for (i64 b = 0; b < B; ++b) {
        for (i64 w = 0; w < nW; ++w) {
            const i64 wy = w / Wn, wx = w % Wn;
            T* yw = y + (b * nW + w) * t * C;
            for (i64 c = 0; c < C; ++c) {
                const T* xc = x + (b * C + c) * H * W + wy * M * W + wx * M;
                for (i64 iy = 0; iy < M; ++iy)
                    for (i64 ix = 0; ix < M; ++ix) yw[(iy * M + ix) * C + c] = xc[iy * W + ix];
            }
        }
    }
}

template <typename T>
void window_reverse(const T* x, T* y, i64 B, i64 C, i64 H, i64 W, i64 M) {
    const i64 Wn = W / M, nW = (H / M) * Wn, t = M * M;
#pragma omp parallel for collapse(2) schedule(static)
    for (i64 b = 0; b < B; ++b) {
        for (i64 w = 0; w < nW; ++w) {
            const i64 wy = w / Wn, wx = w % Wn;
            const T* xw = x + (b * nW + w) * t * C;
            for (i64 c = 0; c < C; ++c) {
                T* yc = y + (b * C + c) * H * W + wy * M * W + wx * M;
                for (i64 iy = 0; iy < M; ++iy)
                    for (i64 ix = 0; ix < M; ++ix) yc[iy * W + ix] = xw[(iy * M + ix) * C + c];
            }
        }
    }
}

// (NW, t, C) -> (NW*h, t, C/h)
template <typename T>
void split_heads(const T* x, T* y, i64 NW, i64 t, i64 C, i64 h) {
    const i64 dh = C / h;
#pragma omp parallel for collapse(2) schedule(static)
    for (i64 w = 0; w < NW; ++w) {
        for (i64 hh = 0; hh < h; ++hh) {
            const T* xw = x + w * t * C + hh * dh;
            T* yw = y + (w * h + hh) * t * dh;
            for (i64 i = 0; i < t; ++i) std::copy_n(xw + i * C, dh, yw + i * dh);
        }
    }
}

template <typename T>
void merge_heads(const T* x, T* y, i64 NW, i64 t, i64 C, i64 h) {
    const i64 dh = C / h;
#pragma omp parallel for collapse(2) schedule(static)
    for (i64 w = 0; w < NW; ++w) {
        for (i64 hh = 0; hh < h; ++hh) {
            const T* xw = x + (w * h + hh) * t * dh;
            T* yw = y + w * t * C + hh * dh;
            for (i64 i = 0; i < t; ++i) std::copy_n(xw + i * dh, dh, yw + i * C);
        }
    }
}

// logits (B*nW*h, t, t) += bias_table[head][idx[i,j]] + mask[window][i,j];
// table has `entries` offsets per head, idx holds t*t entries.
template <typename T>
void add_attn_bias(T* logits, const T* table, const std::int32_t* idx, const T* mask, i64 BnW,
                   i64 nW, i64 h, i64 t, i64 entries) {
#pragma omp parallel for schedule(static)
    for (i64 w = 0; w < BnW * h; ++w) {
        const i64 hh = w % h, wi = (w / h) % nW;
        T* lw = logits + w * t * t;
        const T* th = table + hh * entries;
        const T* mw = mask ? mask + wi * t * t : nullptr;
        for (i64 ij = 0; ij < t * t; ++ij) {
            T v = th[idx[ij]];
            if (mw) v += mw[ij];
            lw[ij] += v;
        }
    }
}

// gradient of the bias table: per head, sum logit grads over all windows
template <typename T>
void add_attn_bias_bwd(const T* glogits, T* gtable, const std::int32_t* idx, i64 BnW, i64 h,
                       i64 t, i64 entries) {
#pragma omp parallel for schedule(static)
    for (i64 hh = 0; hh < h; ++hh) {
        T* gt = gtable + hh * entries;
        for (i64 ij = 0; ij < t * t; ++ij) {
            T acc = T(0);
            for (i64 w = 0; w < BnW; ++w) acc += glogits[(w * h + hh) * t * t + ij];
            gt[idx[ij]] += acc;
        }
    }
}

}  // namespace gshdr::kern
