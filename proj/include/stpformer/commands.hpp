#pragma once

#include <cstddef>
#include <string>

namespace stpformer {

// Process-level entry points behind the CLI. Each maps exceptions to exit
// codes instead of propagating: 0 success, 1 rejected configuration,
// 2 unusable data or indices, 3 non-finite values mid-computation.

// Fit a model per the run config; writes checkpoint.stpf, train_log.jsonl and
// metrics.json (test-split scores) into out_dir.
int cmd_train(const std::string& config_path, const std::string& out_dir);

// Score a stored checkpoint on a dataset's test split using the
// normalization stats frozen at training time. Writes eval_metrics.json next
// to the checkpoint and prints the same JSON.
int cmd_eval(const std::string& ckpt_path, const std::string& data_dir);

// Forecast one test window and dump diagnostics: abs-error grid as CSV and
// PPM heatmap, plus predicted-vs-actual series for one node.
int cmd_inspect(const std::string& ckpt_path, const std::string& data_dir, std::size_t window,
                std::size_t node, const std::string& out_dir);

// Generate the synthetic dataset described by the config's data.synth
// section into out_dir (loadable with load_dataset).
int cmd_synth(const std::string& config_path, const std::string& out_dir);

} // namespace stpformer
