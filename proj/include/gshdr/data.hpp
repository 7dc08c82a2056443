#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gshdr/imageio.hpp"
#include "gshdr/tensor.hpp"

namespace gshdr::data {

// Three LDR exposures of one scene, shortest first, with strictly
// increasing exposure times. Times are relative; the reference (middle)
// exposure is normalized to t = 1.
struct ExposureStack {
    std::array<io::Image, 3> ldr;
    std::array<double, 3> t{0.25, 1.0, 4.0};
    double gamma = 2.2;
};

// A training/eval item: the stack plus a ground-truth HDR image in [0, 1]
// aligned to the middle exposure. gt may be undefined for inference input.
struct Sample {
    ExposureStack stack;
    io::Image gt;
};

// Parsed form of the plain-text stack description: three image lines
// "<path> <stop>", an optional "gt <path>" line and an optional
// "scale <v>" line giving the divisor that maps the GT file into [0, 1].
struct StackManifest {
    std::array<std::string, 3> paths;
    std::array<double, 3> stops{-2.0, 0.0, 2.0};
    std::string gt_path;
    double gt_scale = 1.0;
};

StackManifest read_manifest(const std::string& path);
void write_manifest(const std::string& path, const StackManifest& m);

// Loads every image in the manifest; relative paths resolve against the
// manifest's directory. Exposure times are 2^stop, renormalized so the
// middle exposure is 1. The GT is divided by gt_scale and clamped to [0,1].
Sample load_sample(const std::string& manifest_path, double gamma = 2.2);

// Inverse camera response: H = I^gamma / t, elementwise.
Tensor<float> gamma_normalize(const Tensor<float>& I, double t, double gamma);

// Network input assembly: X stacks (H_k, I_k) channel pairs for all three
// exposures (18 channels); X2 is the middle pair (6 channels). Returned
// shapes are (1,18,H,W) and (1,6,H,W).
std::pair<Tensor<float>, Tensor<float>> build_input(const ExposureStack& s);

// All size x size crops on the (0, stride, 2*stride, ...) grid; the same
// window is applied to each LDR and the GT.
std::vector<Sample> extract_patches(const Sample& s, i64 size, i64 stride);

// Dihedral-group transform: bit 2 mirrors horizontally, low two bits count
// quarter-turn rotations. Applied identically to every image of the sample.
Sample augment(const Sample& s, int code);

// Deterministic synthetic scene: smooth background plus 2-5 anti-aliased
// shapes, some of which move between exposures. LDRs are 8-bit quantized
// re-exposures of the ground truth with mild noise in dark regions.
Sample synth_scene(std::uint64_t seed, i64 h, i64 w);

// Same scene; additionally fills `moved` (H, W) with 1 where any moving
// shape touches any exposure, 0 elsewhere.
Sample synth_scene_debug(std::uint64_t seed, i64 h, i64 w, Tensor<float>& moved);

}  // namespace gshdr::data
