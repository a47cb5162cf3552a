#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stpformer/embedding.hpp"
#include "stpformer/graph.hpp"
#include "stpformer/tensor.hpp"

namespace stpformer {

// Chronological split fractions, train earliest.
struct SplitSpec {
    double train = 0.6;
    double val = 0.2;
    double test = 0.2;
};

// Half-open row ranges [begin, end) over the series; disjoint and ordered.
struct SplitRanges {
    std::size_t train_begin = 0;
    std::size_t train_end = 0; // == val_begin
    std::size_t val_end = 0;   // == test_begin
    std::size_t test_end = 0;

    std::size_t train_len() const { return train_end - train_begin; }
    std::size_t val_len() const { return val_end - train_end; }
    std::size_t test_len() const { return test_end - val_end; }
};

SplitRanges apply_split(std::size_t n_steps, const SplitSpec& spec);

// Per-feature affine normalization stats. A feature whose training std
// vanishes keeps std 1 so the transform degenerates to centering.
struct NormStats {
    Tensor mean;   // (F)
    Tensor stddev; // (F)
};

struct DatasetBundle {
    Tensor series; // (T, N, F)
    TimestampMeta meta;
    RoadGraph graph;
    SplitRanges splits;
    NormStats norm;
    bool normalized = false;
};

// Directory layout: meta.json + data.f32 (+ edges.csv unless grid kind).
DatasetBundle load_dataset(const std::string& dir, const SplitSpec& spec = {});
void save_dataset(const DatasetBundle& bundle, const std::string& dir);

// "2016-07-04T00:00:00" wire form shared by dataset metadata and checkpoints
std::string format_timestamp(const TimestampMeta& m);
void parse_timestamp(const std::string& s, TimestampMeta& m); // DataError on junk

// Population (divide-by-n) statistics over the training rows only.
NormStats fit_zscore(const Tensor& series, const SplitRanges& splits);
// (x - mean) / std and its exact inverse, applied along the last axis
Tensor normalize(const Tensor& x, const NormStats& stats);
Tensor denormalize(const Tensor& x, const NormStats& stats);
// fits on the training split, rewrites bundle.series in place, stores stats
void zscore(DatasetBundle& bundle);

// Start row of every window that fits inside each split. A window occupies
// rows [start, start + m + h): m input rows, then h target rows.
struct SplitWindows {
    std::vector<std::size_t> train, val, test;
};

SplitWindows make_windows(const DatasetBundle& bundle, std::size_t m, std::size_t h);

Tensor window_input(const Tensor& series, std::size_t start, std::size_t m);
Tensor window_target(const Tensor& series, std::size_t start, std::size_t m, std::size_t h);

// Synthetic traffic: per node a daily sinusoid, phase-delayed by hop distance
// from node 0, plus stationary AR(1) Gaussian noise with marginal std
// noise_std (noise_rho = 0 gives white noise). Deterministic per seed.
struct SynthParams {
    std::size_t n_nodes = 8;
    std::string topology = "ring"; // "ring" or "grid"
    std::size_t grid_rows = 0, grid_cols = 0;
    std::size_t days = 14;
    int interval_minutes = 5;
    double amplitude = 1.0;
    double noise_std = 0.5;
    double noise_rho = 0.95;
    std::size_t phase_steps = 12; // per-hop phase delay, in steps
    std::uint64_t seed = 1;
};

DatasetBundle synth_generate(const SynthParams& params, const SplitSpec& spec = {});

// Training-split mean per (daily slot, node, feature); the training range
// must cover at least one full day.
Tensor daily_profile(const DatasetBundle& bundle);

// Historical-average forecasts for the given window starts, (W, h, N, F),
// on the same scale as bundle.series.
Tensor historical_average_predictions(const DatasetBundle& bundle,
                                      const std::vector<std::size_t>& starts, std::size_t m,
                                      std::size_t h);

} // namespace stpformer
