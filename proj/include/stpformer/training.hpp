#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "stpformer/autograd.hpp"
#include "stpformer/data.hpp"
#include "stpformer/model.hpp"

namespace stpformer {

enum class LossKind { Mae, Huber };

struct TrainConfig {
    std::size_t batch_size = 16;
    double base_lr = 1e-3;
    std::size_t warmup_epochs = 5;
    std::size_t max_epochs = 200;
    std::size_t patience = 50;
    std::uint64_t seed = 1;
    double weight_decay = 0.01;
    double grad_clip = 0.0; // max global gradient norm; 0 disables clipping
    LossKind loss = LossKind::Mae;
    double huber_delta = 1.0;

    void validate() const;
};

struct Metrics {
    double mae = 0.0;
    double rmse = 0.0;
    std::optional<double> mape; // percent; absent when no target clears the floor
};

// MAPE skips entries with |target| <= mape_floor so sparse zeros cannot
// produce NaN or infinities.
Metrics compute_metrics(const Tensor& pred, const Tensor& target, double mape_floor = 1e-4);

// Streaming form of compute_metrics for split-level evaluation.
struct MetricsAccumulator {
    double abs_sum = 0.0, sq_sum = 0.0;
    double mape_sum = 0.0;
    std::size_t count = 0, mape_count = 0;
    double floor = 1e-4;

    void add(const Tensor& pred, const Tensor& target);
    Metrics finalize() const;
};

// Linear warmup to base_lr, then a cosine decay toward 0. Both branches
// evaluate to base_lr at epoch == warmup_epochs.
double lr_at(const TrainConfig& cfg, std::size_t epoch);

struct OptimizerState {
    std::map<std::string, Tensor> m1, m2; // first/second moments per parameter
    std::size_t step = 0;
    double weight_decay = 0.01;
};

OptimizerState make_optimizer(const ParameterStore& params, double weight_decay);

// AdamW: decoupled decay p <- p - lr*wd*p applied before the bias-corrected
// moment update. Deterministic; no internal randomness.
void adamw_step(ParameterStore& params, OptimizerState& state, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);

// Scales every gradient by max_norm/|g| when the global norm exceeds max_norm.
void clip_gradients(ParameterStore& params, double max_norm);

struct Batch {
    Tensor input;      // (B, m, N, F), on the bundle's (normalized) scale
    Tensor target_raw; // (B, h, N, F), denormalized
    std::vector<long> t0;
};

Batch make_batch(const DatasetBundle& bundle, const std::vector<std::size_t>& starts,
                 std::size_t m, std::size_t h);

// model output mapped back to the raw scale via the stored stats
Var denormalized_forward(Tape& t, StpFormer& model, const Batch& batch, const NormStats& norm);

// scalar training loss between raw-scale predictions and raw-scale targets
Var prediction_loss(Tape& t, Var y_den, const Tensor& target_raw, LossKind kind,
                    double huber_delta);

// zeroes grads, runs backward, returns the loss value
double loss_and_grad(StpFormer& model, const Batch& batch, const NormStats& norm, LossKind kind,
                     double huber_delta);

struct EvalOutcome {
    Metrics metrics;
    double loss = 0.0;
};

EvalOutcome evaluate_split(StpFormer& model, const DatasetBundle& bundle,
                           const std::vector<std::size_t>& starts, const TrainConfig& cfg);

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    Metrics val;
};

struct TrainResult {
    std::vector<EpochRecord> log;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
    OptimizerState optimizer; // state as of the restored best epoch
};

// Seeded-shuffle epoch loop with early stopping: stops once the epochs since
// the last validation improvement exceed cfg.patience, then restores the best
// parameters. Optionally emits one JSON line per epoch to log_stream.
TrainResult train_loop(StpFormer& model, const DatasetBundle& bundle, const SplitWindows& windows,
                       const TrainConfig& cfg, std::ostream* log_stream = nullptr);

// Central differences (step 1e-5 by default) on n_probes random coordinates
// against the tape gradient. Relative errors are floored at 1e-3 absolute
// magnitude, the best finite differencing itself resolves near zero.
double finite_diff_check(ParameterStore& params, const std::function<Var(Tape&)>& scalar_loss,
                         std::size_t n_probes, std::uint64_t seed, double step = 1e-5);

// Same probe check on the actual training loss of a micro model (<= 5000
// parameters; larger stores are rejected).
double finite_diff_check(StpFormer& model, const DatasetBundle& bundle,
                         const std::vector<std::size_t>& starts, std::size_t n_probes,
                         std::uint64_t seed, double step = 1e-5);

} // namespace stpformer
