#pragma once

#include <string>

#include "json.hpp"
#include "stpformer/data.hpp"
#include "stpformer/model.hpp"
#include "stpformer/training.hpp"

namespace stpformer {

// Where the training data comes from: an on-disk dataset directory or the
// synthetic generator. Exactly one of the two.
struct DataConfig {
    bool use_synth = false;
    std::string path;
    SynthParams synth;
    SplitSpec split;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
};

// Strict parsers: unknown keys anywhere raise ConfigError so misspelled
// ablation flags fail loudly instead of silently using defaults.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

nlohmann::json run_config_to_json(const RunConfig& cfg);

} // namespace stpformer
