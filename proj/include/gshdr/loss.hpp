#pragma once

#include <cstdint>

#include "gshdr/tensor.hpp"

namespace gshdr {

// Gaussian-window SSIM settings. Defaults are the standard 11x11 window
// with sigma 1.5, stabilizers K1/K2 and unit dynamic range.
struct SsimConfig {
    i64 window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double range = 1.0;
};

// Composite training loss: total = l1 + l2, with l1 the mean absolute
// difference of the tone-mapped pair and l2 = 1 - ssim of the pair. All
// three are scalar tensors attached to the active tape.
template <typename T>
struct LossTerms {
    Tensor<T> total, l1, l2;
};

// Mean local SSIM over Gaussian-weighted neighborhoods, averaged over
// batch and channels. Differentiable; inputs must lie in [0, 1] and be at
// least window x window.
template <typename T>
Tensor<T> ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimConfig& cfg = {});

// Loss on tone-mapped values; tone mapping is strict (out-of-range input
// is an error). `mu` is the range-compression strength.
template <typename T>
LossTerms<T> total_loss(const Tensor<T>& pred, const Tensor<T>& gt, double mu = 5000.0,
                        const SsimConfig& cfg = {});

// -10*log10(MSE) for signals on [0, 1], accumulated in double and capped
// at 99 dB for identical inputs.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b);

// The four reported metrics: PSNR and SSIM in the tone-mapped (mu) and
// linear (l) domains.
struct MetricReport {
    double psnr_mu = 0, psnr_l = 0, ssim_mu = 0, ssim_l = 0;
};

// Evaluation-path metrics. Values outside [0, 1] are clamped with a
// warning on stderr rather than rejected; all math runs in double.
template <typename T>
MetricReport compute_metrics(const Tensor<T>& pred, const Tensor<T>& gt, double mu = 5000.0);

}  // namespace gshdr
