#include <cmath>
#include <cstdio>
#include <random>

#include <omp.h>

#include "gshdr/attention.hpp"
#include "gshdr/ops.hpp"
#include "gshdr/ref.hpp"

// Timing comparison between the parallel kernels and the serial reference
// implementations, plus the max elementwise deviation so the two routes can
// be seen to agree. Run with OMP_NUM_THREADS to vary the thread count.

using namespace gshdr;

namespace {

std::mt19937_64 g_rng(42);

template <typename T>
Tensor<T> rnd(const Shape& s) {
    Tensor<T> t(s);
    for (i64 i = 0; i < t.numel(); ++i)
        t[i] = static_cast<T>(static_cast<double>(g_rng() >> 11) * 0x1.0p-53 - 0.5);
    return t;
}

template <typename F>
double time_best(F&& f, int reps) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const double t0 = omp_get_wtime();
        f();
        best = std::min(best, omp_get_wtime() - t0);
    }
    return best * 1e3;
}

template <typename T>
double max_diff(const Tensor<T>& a, const Tensor<T>& b) {
    double m = 0;
    for (i64 i = 0; i < a.numel(); ++i)
        m = std::max(m, std::fabs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

void report(const char* name, double par_ms, double ser_ms, double diff) {
    std::printf("%-24s parallel %8.3f ms   serial %8.3f ms   speedup %5.2fx   max_diff %.3g\n",
                name, par_ms, ser_ms, ser_ms / par_ms, diff);
}

}  // namespace

int main() {
    std::printf("threads = %d\n", omp_get_max_threads());
    const int reps = 5;

    {
        auto x = rnd<float>(Shape{2, 32, 128, 128});
        auto w = rnd<float>(Shape{32, 32, 3, 3});
        auto b = rnd<float>(Shape{32});
        Tensor<float> y, yr;
        const double tp = time_best([&] { y = ops::conv2d(x, w, b, ops::ConvKind::Full3x3); }, reps);
        const double ts = time_best([&] { yr = ref::conv2d_full3x3_reflect(x, w, b); }, reps);
        report("conv3x3 32ch 128px", tp, ts, max_diff(y, yr));
    }
    {
        auto x = rnd<float>(Shape{2, 64, 128, 128});
        auto w = rnd<float>(Shape{64, 1, 3, 3});
        auto b = rnd<float>(Shape{64});
        Tensor<float> y, yr;
        const double tp =
            time_best([&] { y = ops::conv2d(x, w, b, ops::ConvKind::Depthwise3x3); }, reps);
        const double ts = time_best([&] { yr = ref::conv2d_dw3x3_reflect(x, w, b); }, reps);
        report("depthwise3x3 64ch", tp, ts, max_diff(y, yr));
    }
    {
        auto x = rnd<float>(Shape{2, 64, 128, 128});
        auto w = rnd<float>(Shape{128, 64, 1, 1});
        auto b = rnd<float>(Shape{128});
        Tensor<float> y, yr;
        const double tp =
            time_best([&] { y = ops::conv2d(x, w, b, ops::ConvKind::Pointwise1x1); }, reps);
        const double ts = time_best([&] { yr = ref::conv2d_pointwise(x, w, b); }, reps);
        report("pointwise 64->128", tp, ts, max_diff(y, yr));
    }
    {
        auto x = rnd<float>(Shape{2, 96, 96, 96});
        auto g = rnd<float>(Shape{96});
        auto b = rnd<float>(Shape{96});
        Tensor<float> y, yr;
        const double tp = time_best([&] { y = ops::layer_norm(x, g, b, 1e-6f); }, reps);
        const double ts = time_best([&] { yr = ref::layer_norm(x, g, b, 1e-6f); }, reps);
        report("layer_norm 96ch", tp, ts, max_diff(y, yr));
    }
    {
        auto x = rnd<float>(Shape{256, 64, 64});
        Tensor<float> y, yr;
        const double tp = time_best([&] { y = ops::softmax_lastdim(x); }, reps);
        const double ts = time_best([&] { yr = ref::softmax_lastdim(x); }, reps);
        report("softmax 256x64x64", tp, ts, max_diff(y, yr));
    }
    {
        const i64 c = 32, m = 8, heads = 4;
        auto x = rnd<float>(Shape{1, c, 64, 64});
        AttentionParams<float> p;
        p.wq = rnd<float>(Shape{c, c});
        p.wk = rnd<float>(Shape{c, c});
        p.wv = rnd<float>(Shape{c, c});
        p.wo = rnd<float>(Shape{c, c});
        p.bq = rnd<float>(Shape{c});
        p.bk = rnd<float>(Shape{c});
        p.bv = rnd<float>(Shape{c});
        p.bo = rnd<float>(Shape{c});
        p.bias_table = rnd<float>(Shape{heads, (2 * m - 1) * (2 * m - 1)});
        Tensor<float> y, yr;
        const double tp = time_best([&] { y = window_attention(x, p, m, heads, m / 2); }, reps);
        const double ts = time_best(
            [&] {
                yr = ref::window_attention_dense(x, p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo,
                                                 p.bo, p.bias_table, m, heads, m / 2);
            },
            reps);
        report("attention 32ch 64px", tp, ts, max_diff(y, yr));
    }
    return 0;
}
