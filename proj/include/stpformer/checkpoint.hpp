#pragma once

#include <cstddef>
#include <map>
#include <string>

#include "stpformer/config.hpp"
#include "stpformer/data.hpp"
#include "stpformer/model.hpp"
#include "stpformer/training.hpp"

namespace stpformer {

// Everything needed to rebuild a trained model away from its training run:
// the run config, the data dimensions it was fitted to, the normalization
// stats, the parameter tensors and the optimizer state at the best epoch.
struct Checkpoint {
    RunConfig config;
    std::size_t d_in = 1;
    std::size_t d_out = 1;
    std::size_t n_nodes = 0;
    TimestampMeta meta; // training-time calendar anchor and cadence
    std::map<std::string, Tensor> params;
    OptimizerState optimizer;
    NormStats norm;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
};

Checkpoint make_checkpoint(const RunConfig& config, const StpFormer& model,
                           const TrainResult& result, const NormStats& norm);

// Single file: magic line, u64 header length, JSON header, then one
// length-prefixed block of raw little-endian doubles per tensor, in header
// order. Writing the same checkpoint twice yields identical bytes.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);

// DataError on anything that is not a well-formed checkpoint.
Checkpoint load_checkpoint(const std::string& path);

// Copies the stored tensors into the model's parameter store. Name or shape
// disagreements throw DataError: the checkpoint belongs to a different
// architecture.
void install_params(const Checkpoint& ckpt, StpFormer& model);

} // namespace stpformer
