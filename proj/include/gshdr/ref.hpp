#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "gshdr/tensor.hpp"

// Serial reference implementations, written as direct transcriptions of the
// definitions with plain loops. They share no code with the production
// kernels (no OpenMP, no shared helpers) so the two can be checked against
// each other; the benchmark tool also times one against the other.

namespace gshdr::ref {

using i64 = std::int64_t;

inline i64 mirror(i64 i, i64 n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * (n - 1) - i;
    }
    return i;
}

template <typename T>
Tensor<T> conv2d_full3x3_reflect(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    const i64 B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3), Co = w.dim(0);
    Tensor<T> y(Shape{B, Co, H, W});
    for (i64 n = 0; n < B; ++n)
        for (i64 co = 0; co < Co; ++co)
            for (i64 oy = 0; oy < H; ++oy)
                for (i64 ox = 0; ox < W; ++ox) {
                    T acc = b.defined() ? b[co] : T(0);
                    for (i64 ci = 0; ci < Ci; ++ci)
                        for (i64 ky = -1; ky <= 1; ++ky)
                            for (i64 kx = -1; kx <= 1; ++kx)
                                acc += w.at(co, ci, ky + 1, kx + 1) *
                                       x.at(n, ci, mirror(oy + ky, H), mirror(ox + kx, W));
                    y.at(n, co, oy, ox) = acc;
                }
    return y;
}

template <typename T>
Tensor<T> conv2d_dw3x3_reflect(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    const i64 B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor<T> y(x.shape());
    for (i64 n = 0; n < B; ++n)
        for (i64 c = 0; c < C; ++c)
            for (i64 oy = 0; oy < H; ++oy)
                for (i64 ox = 0; ox < W; ++ox) {
                    T acc = b.defined() ? b[c] : T(0);
                    for (i64 ky = -1; ky <= 1; ++ky)
                        for (i64 kx = -1; kx <= 1; ++kx)
                            acc += w.at(c, 0, ky + 1, kx + 1) *
                                   x.at(n, c, mirror(oy + ky, H), mirror(ox + kx, W));
                    y.at(n, c, oy, ox) = acc;
                }
    return y;
}

template <typename T>
Tensor<T> conv2d_pointwise(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    const i64 B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3), Co = w.dim(0);
    Tensor<T> y(Shape{B, Co, H, W});
    for (i64 n = 0; n < B; ++n)
        for (i64 co = 0; co < Co; ++co)
            for (i64 oy = 0; oy < H; ++oy)
                for (i64 ox = 0; ox < W; ++ox) {
                    T acc = b.defined() ? b[co] : T(0);
                    for (i64 ci = 0; ci < Ci; ++ci)
                        acc += w[co * Ci + ci] * x.at(n, ci, oy, ox);
                    y.at(n, co, oy, ox) = acc;
                }
    return y;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
    const i64 B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor<T> y(x.shape());
    for (i64 n = 0; n < B; ++n)
        for (i64 oy = 0; oy < H; ++oy)
            for (i64 ox = 0; ox < W; ++ox) {
                T mean = T(0);
                for (i64 c = 0; c < C; ++c) mean += x.at(n, c, oy, ox);
                mean /= T(C);
                T var = T(0);
                for (i64 c = 0; c < C; ++c) {
                    const T d = x.at(n, c, oy, ox) - mean;
                    var += d * d;
                }
                var /= T(C);
                const T rstd = T(1) / std::sqrt(var + eps);
                for (i64 c = 0; c < C; ++c)
                    y.at(n, c, oy, ox) = (x.at(n, c, oy, ox) - mean) * rstd * gamma[c] + beta[c];
            }
    return y;
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
    const i64 cols = x.dim(x.rank() - 1), rows = x.numel() / cols;
    Tensor<T> y(x.shape());
    for (i64 r = 0; r < rows; ++r) {
        T mx = x[r * cols];
        for (i64 c = 1; c < cols; ++c) mx = std::max(mx, x[r * cols + c]);
        T sum = T(0);
        for (i64 c = 0; c < cols; ++c) sum += std::exp(x[r * cols + c] - mx);
        for (i64 c = 0; c < cols; ++c) y[r * cols + c] = std::exp(x[r * cols + c] - mx) / sum;
    }
    return y;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    Tensor<T> y(x.shape());
    for (i64 i = 0; i < x.numel(); ++i)
        y[i] = x[i] * T(0.5) * (T(1) + std::erf(x[i] / std::sqrt(T(2))));
    return y;
}

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, i64 r) {
    const i64 B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor<T> y(Shape{B, C * r * r, H / r, W / r});
    for (i64 n = 0; n < B; ++n)
        for (i64 c = 0; c < C; ++c)
            for (i64 iy = 0; iy < H; ++iy)
                for (i64 ix = 0; ix < W; ++ix)
                    y.at(n, c * r * r + (iy % r) * r + (ix % r), iy / r, ix / r) =
                        x.at(n, c, iy, ix);
    return y;
}

template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, i64 r) {
    const i64 B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor<T> y(Shape{B, C / (r * r), H * r, W * r});
    for (i64 n = 0; n < B; ++n)
        for (i64 c = 0; c < C; ++c)
            for (i64 iy = 0; iy < H; ++iy)
                for (i64 ix = 0; ix < W; ++ix)
                    y.at(n, c / (r * r), iy * r + (c / r) % r, ix * r + c % r) = x.at(n, c, iy, ix);
    return y;
}

template <typename T>
Tensor<T> roll(const Tensor<T>& x, i64 sh, i64 sw) {
    const i64 B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor<T> y(x.shape());
    for (i64 n = 0; n < B; ++n)
        for (i64 c = 0; c < C; ++c)
            for (i64 iy = 0; iy < H; ++iy)
                for (i64 ix = 0; ix < W; ++ix)
                    y.at(n, c, ((iy + sh) % H + H) % H, ((ix + sw) % W + W) % W) =
                        x.at(n, c, iy, ix);
    return y;
}

// Brute-force windowed attention. Every window's full affinity matrix is
// materialized with explicit loops. A token at rolled-canvas position
// (ry, rx) reads from source position ((ry+shift) mod H, (rx+shift) mod W),
// which makes the cyclic shift implicit. Cross-seam pairs (tokens on
// opposite sides of row H-shift or column W-shift of the rolled canvas) are
// suppressed with the same -1e9 additive surrogate the production path uses.
template <typename T>
Tensor<T> window_attention_dense(const Tensor<T>& x, const Tensor<T>& wq, const Tensor<T>& bq,
                                 const Tensor<T>& wk, const Tensor<T>& bk, const Tensor<T>& wv,
                                 const Tensor<T>& bv, const Tensor<T>& wo, const Tensor<T>& bo,
                                 const Tensor<T>& table, i64 m, i64 heads, i64 shift) {
    const i64 B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const i64 dh = C / heads, t = m * m, span = 2 * m - 1;
    Tensor<T> y(x.shape());
    std::vector<T> tok(static_cast<std::size_t>(t * C));
    std::vector<T> q(tok.size()), k(tok.size()), v(tok.size()), ctx(tok.size());
    std::vector<T> logits(static_cast<std::size_t>(t * t)), p(logits.size());
    std::vector<i64> sy(static_cast<std::size_t>(t)), sx(sy.size()), ry(sy.size()), rx(sy.size());
    for (i64 n = 0; n < B; ++n)
        for (i64 wy = 0; wy < H / m; ++wy)
            for (i64 wx = 0; wx < W / m; ++wx) {
                for (i64 i = 0; i < t; ++i) {
                    ry[i] = wy * m + i / m;
                    rx[i] = wx * m + i % m;
                    sy[i] = (ry[i] + shift) % H;
                    sx[i] = (rx[i] + shift) % W;
                    for (i64 c = 0; c < C; ++c) tok[i * C + c] = x.at(n, c, sy[i], sx[i]);
                }
                for (i64 i = 0; i < t; ++i)
                    for (i64 c = 0; c < C; ++c) {
                        T aq = bq[c], ak = bk[c], av = bv[c];
                        for (i64 d = 0; d < C; ++d) {
                            aq += tok[i * C + d] * wq.at(d, c);
                            ak += tok[i * C + d] * wk.at(d, c);
                            av += tok[i * C + d] * wv.at(d, c);
                        }
                        q[i * C + c] = aq;
                        k[i * C + c] = ak;
                        v[i * C + c] = av;
                    }
                for (i64 h0 = 0; h0 < heads; ++h0) {
                    for (i64 i = 0; i < t; ++i)
                        for (i64 j = 0; j < t; ++j) {
                            T dot = T(0);
                            for (i64 d = 0; d < dh; ++d)
                                dot += q[i * C + h0 * dh + d] * k[j * C + h0 * dh + d];
                            dot /= std::sqrt(T(dh));
                            const i64 dy = ry[i] - ry[j], dx = rx[i] - rx[j];
                            dot += table.at(h0, (dy + m - 1) * span + (dx + m - 1));
                            if (shift > 0) {
                                const bool same_rows = (ry[i] < H - shift) == (ry[j] < H - shift);
                                const bool same_cols = (rx[i] < W - shift) == (rx[j] < W - shift);
                                if (!(same_rows && same_cols)) dot += T(-1e9);
                            }
                            logits[i * t + j] = dot;
                        }
                    for (i64 i = 0; i < t; ++i) {
                        T mx = logits[i * t];
                        for (i64 j = 1; j < t; ++j) mx = std::max(mx, logits[i * t + j]);
                        T sum = T(0);
                        for (i64 j = 0; j < t; ++j) {
                            p[i * t + j] = std::exp(logits[i * t + j] - mx);
                            sum += p[i * t + j];
                        }
                        for (i64 j = 0; j < t; ++j) p[i * t + j] /= sum;
                    }
                    for (i64 i = 0; i < t; ++i)
                        for (i64 d = 0; d < dh; ++d) {
                            T acc = T(0);
                            for (i64 j = 0; j < t; ++j)
                                acc += p[i * t + j] * v[j * C + h0 * dh + d];
                            ctx[i * C + h0 * dh + d] = acc;
                        }
                }
                for (i64 i = 0; i < t; ++i)
                    for (i64 c = 0; c < C; ++c) {
                        T acc = bo[c];
                        for (i64 d = 0; d < C; ++d) acc += ctx[i * C + d] * wo.at(d, c);
                        y.at(n, c, sy[i], sx[i]) = acc;
                    }
            }
    return y;
}

// Shifted attention computed without any mask or roll: each rolled window is
// split at the seams into up to four contiguous source regions, and tokens
// attend strictly within their region. Relative offsets for the bias table
// come from source coordinates, which within one region equal the in-window
// offsets.
template <typename T>
Tensor<T> window_attention_regions(const Tensor<T>& x, const Tensor<T>& wq, const Tensor<T>& bq,
                                   const Tensor<T>& wk, const Tensor<T>& bk, const Tensor<T>& wv,
                                   const Tensor<T>& bv, const Tensor<T>& wo, const Tensor<T>& bo,
                                   const Tensor<T>& table, i64 m, i64 heads, i64 shift) {
    const i64 B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const i64 dh = C / heads, span = 2 * m - 1;
    Tensor<T> y(x.shape());
    // Split [lo, lo+m) at the seam position `cut` (a rolled-canvas row/col).
    auto segments = [&](i64 lo, i64 cut) {
        std::vector<std::pair<i64, i64>> segs;  // (start, length) in rolled coords
        if (cut > lo && cut < lo + m) {
            segs.emplace_back(lo, cut - lo);
            segs.emplace_back(cut, lo + m - cut);
        } else {
            segs.emplace_back(lo, m);
        }
        return segs;
    };
    for (i64 n = 0; n < B; ++n)
        for (i64 wy = 0; wy < H / m; ++wy)
            for (i64 wx = 0; wx < W / m; ++wx) {
                const auto rows = segments(wy * m, shift > 0 ? H - shift : i64(-1));
                const auto cols = segments(wx * m, shift > 0 ? W - shift : i64(-1));
                for (const auto& rs : rows)
                    for (const auto& cs : cols) {
                        const i64 t = rs.second * cs.second;
                        std::vector<T> tok(static_cast<std::size_t>(t * C));
                        std::vector<T> q(tok.size()), k(tok.size()), v(tok.size()),
                            ctx(tok.size());
                        std::vector<i64> py(static_cast<std::size_t>(t)), px(py.size());
                        for (i64 i = 0; i < t; ++i) {
                            const i64 ry = rs.first + i / cs.second;
                            const i64 rx = cs.first + i % cs.second;
                            py[i] = (ry + shift) % H;
                            px[i] = (rx + shift) % W;
                            for (i64 c = 0; c < C; ++c) tok[i * C + c] = x.at(n, c, py[i], px[i]);
                        }
                        for (i64 i = 0; i < t; ++i)
                            for (i64 c = 0; c < C; ++c) {
                                T aq = bq[c], ak = bk[c], av = bv[c];
                                for (i64 d = 0; d < C; ++d) {
                                    aq += tok[i * C + d] * wq.at(d, c);
                                    ak += tok[i * C + d] * wk.at(d, c);
                                    av += tok[i * C + d] * wv.at(d, c);
                                }
                                q[i * C + c] = aq;
                                k[i * C + c] = ak;
                                v[i * C + c] = av;
                            }
                        std::vector<T> row(static_cast<std::size_t>(t));
                        for (i64 h0 = 0; h0 < heads; ++h0)
                            for (i64 i = 0; i < t; ++i) {
                                for (i64 j = 0; j < t; ++j) {
                                    T dot = T(0);
                                    for (i64 d = 0; d < dh; ++d)
                                        dot += q[i * C + h0 * dh + d] * k[j * C + h0 * dh + d];
                                    dot /= std::sqrt(T(dh));
                                    // Source offsets; regions never wrap, so these
                                    // are the true relative positions.
                                    const i64 dy = py[i] - py[j], dx = px[i] - px[j];
                                    dot += table.at(h0, (dy + m - 1) * span + (dx + m - 1));
                                    row[j] = dot;
                                }
                                T mx = row[0];
                                for (i64 j = 1; j < t; ++j) mx = std::max(mx, row[j]);
                                T sum = T(0);
                                for (i64 j = 0; j < t; ++j) {
                                    row[j] = std::exp(row[j] - mx);
                                    sum += row[j];
                                }
                                for (i64 d = 0; d < dh; ++d) {
                                    T acc = T(0);
                                    for (i64 j = 0; j < t; ++j)
                                        acc += (row[j] / sum) * v[j * C + h0 * dh + d];
                                    ctx[i * C + h0 * dh + d] = acc;
                                }
                            }
                        for (i64 i = 0; i < t; ++i)
                            for (i64 c = 0; c < C; ++c) {
                                T acc = bo[c];
                                for (i64 d = 0; d < C; ++d) acc += ctx[i * C + d] * wo.at(d, c);
                                y.at(n, c, py[i], px[i]) = acc;
                            }
                    }
            }
    return y;
}

// ---- metric oracles (definitional, double precision) -----------------------

inline double mse(const Tensor<double>& a, const Tensor<double>& b) {
    double acc = 0;
    for (i64 i = 0; i < a.numel(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.numel());
}

inline double psnr(const Tensor<double>& a, const Tensor<double>& b) {
    const double m = mse(a, b);
    if (m <= 0) return 99.0;
    return std::min(99.0, -10.0 * std::log10(m));
}

inline double mu_law_scalar(double x, double mu) { return std::log1p(mu * x) / std::log1p(mu); }

inline double mu_law_inverse_scalar(double y, double mu) {
    return (std::pow(1.0 + mu, y) - 1.0) / mu;
}

inline Tensor<double> mu_law(const Tensor<double>& x, double mu) {
    Tensor<double> y(x.shape());
    for (i64 i = 0; i < x.numel(); ++i) y[i] = mu_law_scalar(x[i], mu);
    return y;
}

// Mean local SSIM with an 11x11 Gaussian (sigma 1.5) over valid windows,
// averaged over batch and channels. Local statistics use the centered
// E[(a-mu)^2] form.
inline double ssim(const Tensor<double>& a, const Tensor<double>& b, i64 win = 11,
                   double sigma = 1.5, double k1 = 0.01, double k2 = 0.03, double range = 1.0) {
    const i64 B = a.dim(0), C = a.dim(1), H = a.dim(2), W = a.dim(3), r = win / 2;
    std::vector<double> g(static_cast<std::size_t>(win * win));
    double norm = 0;
    for (i64 i = 0; i < win; ++i)
        for (i64 j = 0; j < win; ++j) {
            const double dy = static_cast<double>(i - r), dx = static_cast<double>(j - r);
            g[i * win + j] = std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
            norm += g[i * win + j];
        }
    for (double& v : g) v /= norm;
    const double c1 = (k1 * range) * (k1 * range), c2 = (k2 * range) * (k2 * range);
    double total = 0;
    i64 count = 0;
    for (i64 n = 0; n < B; ++n)
        for (i64 c = 0; c < C; ++c)
            for (i64 cy = r; cy < H - r; ++cy)
                for (i64 cx = r; cx < W - r; ++cx) {
                    double ma = 0, mb = 0;
                    for (i64 i = 0; i < win; ++i)
                        for (i64 j = 0; j < win; ++j) {
                            ma += g[i * win + j] * a.at(n, c, cy + i - r, cx + j - r);
                            mb += g[i * win + j] * b.at(n, c, cy + i - r, cx + j - r);
                        }
                    double va = 0, vb = 0, cov = 0;
                    for (i64 i = 0; i < win; ++i)
                        for (i64 j = 0; j < win; ++j) {
                            const double da = a.at(n, c, cy + i - r, cx + j - r) - ma;
                            const double db = b.at(n, c, cy + i - r, cx + j - r) - mb;
                            va += g[i * win + j] * da * da;
                            vb += g[i * win + j] * db * db;
                            cov += g[i * win + j] * da * db;
                        }
                    total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                             ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    ++count;
                }
    return total / static_cast<double>(count);
}

}  // namespace gshdr::ref
