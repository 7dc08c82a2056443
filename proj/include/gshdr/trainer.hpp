#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gshdr/data.hpp"
#include "gshdr/model.hpp"

namespace gshdr {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Optimizer and loop state. Moment buffers are keyed like the parameters
// and shape-match them; epoch is the last completed epoch (-1 before any).
template <typename T>
struct TrainState {
    std::uint64_t step = 0;
    i64 epoch = -1;
    double lr = 1e-4;
    std::uint64_t seed = 0;
    ParameterSet<T> m, v;
};

// Step schedule: `initial` until `drop_epoch`, `dropped` afterwards.
double lr_schedule(i64 epoch, double initial = 1e-4, double dropped = 1e-5,
                   i64 drop_epoch = 20);

// One bias-corrected Adam update over every parameter, in registry order.
// Every parameter must carry a gradient. Increments state.step.
template <typename T>
void adam_step(ParameterSet<T>& params, TrainState<T>& state, double lr,
               const AdamConfig& cfg = {});

struct TrainOptions {
    i64 epochs = 40;
    i64 batch = 4;
    std::uint64_t seed = 0;
    double lr_initial = 1e-4;
    double lr_dropped = 1e-5;
    i64 lr_drop_epoch = 20;
    i64 patch = 256;
    i64 stride = 64;
    bool augment = true;
    std::string checkpoint_path;  // written after every epoch when set
    std::string log_path;         // per-epoch CSV when set
    i64 max_steps = 0;            // stop once state.step reaches this (0 = no cap)
    bool keep_step_log = false;   // record every step's loss in the result
    bool quiet = false;           // suppress per-epoch stderr progress lines
};

struct EpochStats {
    i64 epoch = 0;
    double lr = 0, loss = 0, l1 = 0, l2 = 0, psnr_mu = 0;
};

struct TrainResult {
    ModelParams<float> params;
    TrainState<float> state;
    std::vector<EpochStats> epochs;
    std::vector<double> step_losses;  // only when keep_step_log
};

// Full training loop: per-epoch seeded shuffle, patch extraction,
// augmentation, forward/backward, Adam, logging, checkpointing. A
// non-finite loss aborts with a value error naming the step.
TrainResult train(const std::vector<data::Sample>& dataset, const ModelConfig& cfg,
                  const TrainOptions& opts);

// Resume variant: continues from existing parameters and state (epochs
// [state.epoch + 1, opts.epochs)).
TrainResult train(const std::vector<data::Sample>& dataset, const ModelConfig& cfg,
                  const TrainOptions& opts, ModelParams<float> params,
                  TrainState<float> state);

// Binary checkpoint: "GSHDRCK\0" magic, format version, the model config,
// loop counters, then every parameter and Adam moment as named little-
// endian tensor records. save -> load -> save is byte-identical.
void save_checkpoint(const std::string& path, ModelParams<float>& params,
                     const TrainState<float>& state, const ModelConfig& cfg);

struct Checkpoint {
    ModelConfig cfg;
    ModelParams<float> params;
    TrainState<float> state;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace gshdr
