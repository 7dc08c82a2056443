#include "gshdr/loss.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "gshdr/ops.hpp"

namespace gshdr {

namespace {

void check_ssim_cfg(const SsimConfig& cfg) {
    if (cfg.window < 1 || cfg.window % 2 == 0)
        fail(ErrorKind::Config, "ssim: window size must be odd and positive");
    if (!(cfg.k1 > 0) || !(cfg.k2 > 0)) fail(ErrorKind::Config, "ssim: K1 and K2 must be > 0");
    if (!(cfg.sigma > 0)) fail(ErrorKind::Config, "ssim: sigma must be > 0");
    if (!(cfg.range > 0)) fail(ErrorKind::Config, "ssim: dynamic range must be > 0");
}

template <typename T>
void check_pair(const Tensor<T>& a, const Tensor<T>& b, const char* who) {
    if (!a.defined() || !b.defined()) fail(ErrorKind::Shape, std::string(who) + ": undefined input");
    if (a.shape() != b.shape())
        fail(ErrorKind::Shape, std::string(who) + ": shape mismatch, " + a.shape().str() +
                                   " vs " + b.shape().str());
}

template <typename T>
void check_unit_range(const Tensor<T>& x, const char* who) {
    const T* p = x.data();
    for (i64 i = 0; i < x.numel(); ++i)
        if (!(p[i] >= T(0) && p[i] <= T(1)))
            fail(ErrorKind::Value, std::string(who) + ": value outside [0, 1] at flat index " +
                                       std::to_string(i));
}

// Normalized Gaussian as a depthwise filter bank (C, 1, win, win); shared
// weights across channels, never trainable.
template <typename T>
Tensor<T> gaussian_window(i64 channels, const SsimConfig& cfg) {
    const i64 w = cfg.window, c = w / 2;
    std::vector<double> g(static_cast<std::size_t>(w * w));
    double sum = 0;
    for (i64 y = 0; y < w; ++y)
        for (i64 x = 0; x < w; ++x) {
            const double dy = static_cast<double>(y - c), dx = static_cast<double>(x - c);
            const double v = std::exp(-(dy * dy + dx * dx) / (2.0 * cfg.sigma * cfg.sigma));
            g[static_cast<std::size_t>(y * w + x)] = v;
            sum += v;
        }
    Tensor<T> k(Shape{channels, 1, w, w});
    for (i64 ch = 0; ch < channels; ++ch)
        for (i64 i = 0; i < w * w; ++i)
            k[ch * w * w + i] = static_cast<T>(g[static_cast<std::size_t>(i)] / sum);
    return k;
}

}  // namespace

template <typename T>
Tensor<T> ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimConfig& cfg) {
    check_ssim_cfg(cfg);
    check_pair(a, b, "ssim");
    if (a.rank() != 4) fail(ErrorKind::Shape, "ssim: expected (B,C,H,W), got " + a.shape().str());
    if (a.dim(2) < cfg.window || a.dim(3) < cfg.window)
        fail(ErrorKind::Shape, "ssim: spatial size " + a.shape().str() +
                                   " smaller than the " + std::to_string(cfg.window) +
                                   "-pixel window");
    check_unit_range(a, "ssim");
    check_unit_range(b, "ssim");

    const T c1 = static_cast<T>(cfg.k1 * cfg.range * cfg.k1 * cfg.range);
    const T c2 = static_cast<T>(cfg.k2 * cfg.range * cfg.k2 * cfg.range);
    Tensor<T> win = gaussian_window<T>(a.dim(1), cfg);
    Tensor<T> none;  // no bias

    auto blur = [&](const Tensor<T>& x) { return ops::conv_valid(x, win, none, true); };
    Tensor<T> mu_a = blur(a), mu_b = blur(b);
    Tensor<T> mu_aa = ops::mul(mu_a, mu_a);
    Tensor<T> mu_bb = ops::mul(mu_b, mu_b);
    Tensor<T> mu_ab = ops::mul(mu_a, mu_b);
    Tensor<T> var_a = ops::sub(blur(ops::mul(a, a)), mu_aa);
    Tensor<T> var_b = ops::sub(blur(ops::mul(b, b)), mu_bb);
    Tensor<T> cov = ops::sub(blur(ops::mul(a, b)), mu_ab);

    Tensor<T> num = ops::mul(ops::affine(mu_ab, T(2), c1), ops::affine(cov, T(2), c2));
    Tensor<T> den = ops::mul(ops::affine(ops::add(mu_aa, mu_bb), T(1), c1),
                             ops::affine(ops::add(var_a, var_b), T(1), c2));
    return ops::mean_all(ops::div(num, den));
}

template <typename T>
LossTerms<T> total_loss(const Tensor<T>& pred, const Tensor<T>& gt, double mu,
                        const SsimConfig& cfg) {
    check_pair(pred, gt, "total_loss");
    if (!(mu > 0)) fail(ErrorKind::Config, "total_loss: mu must be > 0");
    Tensor<T> tp = ops::mu_law(pred, static_cast<T>(mu), true);
    Tensor<T> tg = ops::mu_law(gt, static_cast<T>(mu), true);
    LossTerms<T> out;
    out.l1 = ops::mean_all(ops::abs(ops::sub(tg, tp)));
    out.l2 = ops::affine(ssim(tp, tg, cfg), T(-1), T(1));
    out.total = ops::add(out.l1, out.l2);
    return out;
}

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
    check_pair(a, b, "psnr");
    const T* pa = a.data();
    const T* pb = b.data();
    const i64 n = a.numel();
    double mse = 0;
    for (i64 i = 0; i < n; ++i) {
        const double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(n);
    if (mse <= 0) return 99.0;
    return std::min(99.0, -10.0 * std::log10(mse));
}

template <typename T>
MetricReport compute_metrics(const Tensor<T>& pred, const Tensor<T>& gt, double mu) {
    check_pair(pred, gt, "metrics");
    if (pred.rank() != 4)
        fail(ErrorKind::Shape, "metrics: expected (B,C,H,W), got " + pred.shape().str());

    Tensor<double> p = ops::cast<double>(pred);
    Tensor<double> g = ops::cast<double>(gt);
    i64 clamped = 0;
    for (Tensor<double>* t : {&p, &g}) {
        double* v = t->data();
        for (i64 i = 0; i < t->numel(); ++i)
            if (v[i] < 0.0 || v[i] > 1.0) {
                v[i] = std::clamp(v[i], 0.0, 1.0);
                ++clamped;
            }
    }
    if (clamped)
        std::fprintf(stderr, "warning: clamped %lld values outside [0, 1] before computing metrics\n",
                     static_cast<long long>(clamped));

    Tensor<double> tp = ops::mu_law(p, mu, false);
    Tensor<double> tg = ops::mu_law(g, mu, false);
    MetricReport r;
    r.psnr_l = psnr(p, g);
    r.psnr_mu = psnr(tp, tg);
    r.ssim_l = ssim(p, g).item();
    r.ssim_mu = ssim(tp, tg).item();
    return r;
}

#define GSHDR_INSTANTIATE_LOSS(T)                                                             \
    template Tensor<T> ssim<T>(const Tensor<T>&, const Tensor<T>&, const SsimConfig&);        \
    template LossTerms<T> total_loss<T>(const Tensor<T>&, const Tensor<T>&, double,           \
                                        const SsimConfig&);                                   \
    template double psnr<T>(const Tensor<T>&, const Tensor<T>&);                              \
    template MetricReport compute_metrics<T>(const Tensor<T>&, const Tensor<T>&, double);

GSHDR_INSTANTIATE_LOSS(float)
GSHDR_INSTANTIATE_LOSS(double)
#undef GSHDR_INSTANTIATE_LOSS

}  // namespace gshdr
