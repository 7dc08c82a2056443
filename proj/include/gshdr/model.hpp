#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gshdr/blocks.hpp"
#include "gshdr/tensor.hpp"

namespace gshdr {

enum class GatingMode {
    All,    // every feed-forward sub-layer is gated (default)
    First,  // only the units of the finest encoder block are gated
    None,   // every feed-forward sub-layer is a plain MLP
};

const char* to_string(GatingMode m);
GatingMode gating_from_string(const std::string& s);

// Architecture hyperparameters. Widths per scale are C, 2C, 4C, 8C.
struct ModelConfig {
    i64 base_width = 60;
    i64 scale_count = 4;
    std::array<i64, 4> unit_counts{2, 3, 3, 4};
    i64 refinement_count = 2;
    std::array<i64, 4> heads{1, 2, 4, 4};
    i64 window = 8;
    GatingMode gating = GatingMode::All;
    double gamma = 2.2;
    double mu = 5000.0;

    i64 width_at(int scale) const { return base_width << scale; }  // scale is 0-based
    i64 pad_multiple() const { return window << (scale_count - 1); }

    // Full-scale settings are the defaults; desk() is a CPU-friendly
    // reduction and tiny() the configuration used by the gradient and
    // smoke-test suites.
    static ModelConfig full();
    static ModelConfig desk();
    static ModelConfig tiny();
};

// Throws a config error for invalid field combinations (head/width
// divisibility, head width < 2, non-positive sizes).
void validate(const ModelConfig& cfg);

template <typename T>
struct ModelParams {
    Tensor<T> embed_w, embed_b;      // full3x3, 18 -> C
    Tensor<T> shallow_w, shallow_b;  // full3x3, 6 -> C (long shortcut branch)
    std::vector<BlockParams<T>> enc;       // one per scale
    std::vector<DownscaleParams<T>> down;  // scale i -> i+1
    std::vector<UpscaleParams<T>> up;      // up[i]: scale i+1 -> i
    std::vector<Tensor<T>> fuse_w, fuse_b;  // pointwise 2W -> W per decoder scale
    std::vector<BlockParams<T>> dec;        // dec[i] runs at scale i
    BlockParams<T> refine;
    Tensor<T> head_w, head_b;  // full3x3, C -> 3
};

// Ordered name -> tensor view over a ModelParams tree. Tensors are shared
// storage with the tree; the order is the deterministic initialization
// order and also the optimizer's update order.
template <typename T>
class ParameterSet {
public:
    void add(const std::string& name, Tensor<T> t);
    bool contains(const std::string& name) const;
    Tensor<T>& get(const std::string& name);
    const Tensor<T>& get(const std::string& name) const;
    std::size_t size() const { return items_.size(); }
    i64 total_elements() const;
    void zero_grads();
    void set_requires_grad(bool v);

    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

private:
    std::vector<std::pair<std::string, Tensor<T>>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Deterministic initialization: truncated normal (std 0.02) for attention
// projections and bias tables, fan-in-scaled normal for convolutions, ones
// for norm gains, zeros for every bias and norm shift. Convolutions that
// feed the residual stream carry an extra 1/sqrt(2 * blocks) factor so
// activations stay bounded with depth.
template <typename T>
ModelParams<T> init_parameters(const ModelConfig& cfg, std::uint64_t seed);

// Flat named view in initialization order; shares storage with `p`.
template <typename T>
ParameterSet<T> parameter_set(ModelParams<T>& p, const ModelConfig& cfg);

// Full network: X (B,18,H,W) and X2 (B,6,H,W) -> HDR prediction (B,3,H,W)
// in (0,1). Inputs are reflect-padded to the window/scale pyramid multiple
// and the output cropped back.
template <typename T>
Tensor<T> hdr_forward(const Tensor<T>& x, const Tensor<T>& x2, const ModelParams<T>& p,
                      const ModelConfig& cfg);

// Side length, in input pixels, covered by one attention window at each
// scale (window * 2^scale).
std::vector<i64> window_footprints(const ModelConfig& cfg);

}  // namespace gshdr
