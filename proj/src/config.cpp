#include "stpformer/config.hpp"

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "stpformer/errors.hpp"

namespace stpformer {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& j, const char* section,
                         const std::vector<std::string>& allowed) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const auto& k : allowed) {
            if (it.key() == k) {
                known = true;
                break;
            }
        }
        if (!known) {
            throw ConfigError("unknown key \"" + it.key() + "\" in " + section + " section");
        }
    }
}

std::size_t need_uint(const json& j, const char* section, const std::string& key,
                      std::size_t fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    // is_number_unsigned alone would reject values that arrived through a
    // signed C++ int, e.g. our own config echo
    if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw ConfigError(std::string(section) + "." + key +
                          " must be a non-negative integer");
    }
    return static_cast<std::size_t>(v.get<long long>());
}

double need_number(const json& j, const char* section, const std::string& key,
                   double fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_number()) {
        throw ConfigError(std::string(section) + "." + key + " must be a number");
    }
    return v.get<double>();
}

bool need_bool(const json& j, const char* section, const std::string& key, bool fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_boolean()) {
        throw ConfigError(std::string(section) + "." + key + " must be a boolean");
    }
    return v.get<bool>();
}

std::string need_string(const json& j, const char* section, const std::string& key,
                        const std::string& fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_string()) {
        throw ConfigError(std::string(section) + "." + key + " must be a string");
    }
    return v.get<std::string>();
}

ModelConfig parse_model(const json& j) {
    reject_unknown_keys(j, "model",
                        {"m", "h", "d_model", "layers", "k", "d_spat", "d_geo", "heads_spat",
                         "heads_geo", "heads_temp", "ssa_heads", "ssa_chunk_frames", "use_tpa",
                         "use_stgm", "use_ssa", "stgm_stages", "mask_mode"});
    ModelConfig cfg;
    cfg.m = need_uint(j, "model", "m", cfg.m);
    cfg.h = need_uint(j, "model", "h", cfg.h);
    cfg.width = need_uint(j, "model", "d_model", cfg.width);
    cfg.layers = need_uint(j, "model", "layers", cfg.layers);
    cfg.k = need_uint(j, "model", "k", cfg.k);
    cfg.d_spat = need_uint(j, "model", "d_spat", cfg.d_spat);
    cfg.d_geo = need_uint(j, "model", "d_geo", cfg.d_geo);
    cfg.heads.spat = need_uint(j, "model", "heads_spat", cfg.heads.spat);
    cfg.heads.geo = need_uint(j, "model", "heads_geo", cfg.heads.geo);
    cfg.heads.temp = need_uint(j, "model", "heads_temp", cfg.heads.temp);
    cfg.ssa_heads = need_uint(j, "model", "ssa_heads", cfg.ssa_heads);
    cfg.ssa_chunk_frames = need_uint(j, "model", "ssa_chunk_frames", cfg.ssa_chunk_frames);
    cfg.use_tpa = need_bool(j, "model", "use_tpa", cfg.use_tpa);
    cfg.use_stgm = need_bool(j, "model", "use_stgm", cfg.use_stgm);
    cfg.use_ssa = need_bool(j, "model", "use_ssa", cfg.use_ssa);
    cfg.stgm_stages = static_cast<int>(
        need_uint(j, "model", "stgm_stages", static_cast<std::size_t>(cfg.stgm_stages)));
    std::string mode = need_string(j, "model", "mask_mode", "multiplicative");
    if (mode == "multiplicative") {
        cfg.mask_mode = MaskMode::Multiplicative;
    } else if (mode == "additive") {
        cfg.mask_mode = MaskMode::Additive;
    } else {
        throw ConfigError("model.mask_mode must be \"multiplicative\" or \"additive\", got \"" +
                          mode + "\"");
    }
    return cfg;
}

TrainConfig parse_train(const json& j) {
    reject_unknown_keys(j, "train",
                        {"batch_size", "base_lr", "warmup_epochs", "max_epochs", "patience",
                         "seed", "weight_decay", "grad_clip", "loss", "huber_delta"});
    TrainConfig cfg;
    cfg.batch_size = need_uint(j, "train", "batch_size", cfg.batch_size);
    cfg.base_lr = need_number(j, "train", "base_lr", cfg.base_lr);
    cfg.warmup_epochs = need_uint(j, "train", "warmup_epochs", cfg.warmup_epochs);
    cfg.max_epochs = need_uint(j, "train", "max_epochs", cfg.max_epochs);
    cfg.patience = need_uint(j, "train", "patience", cfg.patience);
    cfg.seed = need_uint(j, "train", "seed", cfg.seed);
    cfg.weight_decay = need_number(j, "train", "weight_decay", cfg.weight_decay);
    cfg.grad_clip = need_number(j, "train", "grad_clip", cfg.grad_clip);
    cfg.huber_delta = need_number(j, "train", "huber_delta", cfg.huber_delta);
    std::string loss = need_string(j, "train", "loss", "mae");
    if (loss == "mae") {
        cfg.loss = LossKind::Mae;
    } else if (loss == "huber") {
        cfg.loss = LossKind::Huber;
    } else {
        throw ConfigError("train.loss must be \"mae\" or \"huber\", got \"" + loss + "\"");
    }
    return cfg;
}

SynthParams parse_synth(const json& j) {
    reject_unknown_keys(j, "data.synth",
                        {"n_nodes", "topology", "grid_rows", "grid_cols", "days",
                         "interval_minutes", "amplitude", "noise_std", "noise_rho",
                         "phase_steps", "seed"});
    SynthParams p;
    p.n_nodes = need_uint(j, "data.synth", "n_nodes", p.n_nodes);
    p.topology = need_string(j, "data.synth", "topology", p.topology);
    p.grid_rows = need_uint(j, "data.synth", "grid_rows", p.grid_rows);
    p.grid_cols = need_uint(j, "data.synth", "grid_cols", p.grid_cols);
    p.days = need_uint(j, "data.synth", "days", p.days);
    p.interval_minutes = need_uint(j, "data.synth", "interval_minutes", p.interval_minutes);
    p.amplitude = need_number(j, "data.synth", "amplitude", p.amplitude);
    p.noise_std = need_number(j, "data.synth", "noise_std", p.noise_std);
    p.noise_rho = need_number(j, "data.synth", "noise_rho", p.noise_rho);
    p.phase_steps = need_uint(j, "data.synth", "phase_steps", p.phase_steps);
    p.seed = need_uint(j, "data.synth", "seed", p.seed);
    return p;
}

SplitSpec parse_split(const json& j) {
    reject_unknown_keys(j, "data.split", {"train", "val", "test"});
    SplitSpec s;
    s.train = need_number(j, "data.split", "train", s.train);
    s.val = need_number(j, "data.split", "val", s.val);
    s.test = need_number(j, "data.split", "test", s.test);
    return s;
}

DataConfig parse_data(const json& j) {
    reject_unknown_keys(j, "data", {"path", "synth", "split"});
    DataConfig cfg;
    bool has_path = j.contains("path");
    bool has_synth = j.contains("synth");
    if (has_path == has_synth) {
        throw ConfigError("data section needs exactly one of \"path\" or \"synth\"");
    }
    if (has_path) {
        cfg.path = need_string(j, "data", "path", "");
        if (cfg.path.empty()) throw ConfigError("data.path must not be empty");
    } else {
        const json& s = j.at("synth");
        if (!s.is_object()) throw ConfigError("data.synth must be an object");
        cfg.use_synth = true;
        cfg.synth = parse_synth(s);
    }
    if (j.contains("split")) {
        const json& s = j.at("split");
        if (!s.is_object()) throw ConfigError("data.split must be an object");
        cfg.split = parse_split(s);
    }
    return cfg;
}

} // namespace

RunConfig parse_run_config(const json& j) {
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    reject_unknown_keys(j, "top-level", {"model", "train", "data"});
    RunConfig cfg;
    if (j.contains("model")) {
        if (!j.at("model").is_object()) throw ConfigError("model section must be an object");
        cfg.model = parse_model(j.at("model"));
    }
    if (j.contains("train")) {
        if (!j.at("train").is_object()) throw ConfigError("train section must be an object");
        cfg.train = parse_train(j.at("train"));
    }
    if (!j.contains("data")) throw ConfigError("run config is missing the data section");
    if (!j.at("data").is_object()) throw ConfigError("data section must be an object");
    cfg.data = parse_data(j.at("data"));
    cfg.train.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    return parse_run_config(j);
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
    json model = {
        {"m", cfg.model.m},
        {"h", cfg.model.h},
        {"d_model", cfg.model.width},
        {"layers", cfg.model.layers},
        {"k", cfg.model.k},
        {"d_spat", cfg.model.d_spat},
        {"d_geo", cfg.model.d_geo},
        {"heads_spat", cfg.model.heads.spat},
        {"heads_geo", cfg.model.heads.geo},
        {"heads_temp", cfg.model.heads.temp},
        {"ssa_heads", cfg.model.ssa_heads},
        {"ssa_chunk_frames", cfg.model.ssa_chunk_frames},
        {"use_tpa", cfg.model.use_tpa},
        {"use_stgm", cfg.model.use_stgm},
        {"use_ssa", cfg.model.use_ssa},
        {"stgm_stages", static_cast<std::size_t>(cfg.model.stgm_stages)},
        {"mask_mode", cfg.model.mask_mode == MaskMode::Multiplicative ? "multiplicative"
                                                                      : "additive"},
    };
    json train = {
        {"batch_size", cfg.train.batch_size},
        {"base_lr", cfg.train.base_lr},
        {"warmup_epochs", cfg.train.warmup_epochs},
        {"max_epochs", cfg.train.max_epochs},
        {"patience", cfg.train.patience},
        {"seed", cfg.train.seed},
        {"weight_decay", cfg.train.weight_decay},
        {"grad_clip", cfg.train.grad_clip},
        {"loss", cfg.train.loss == LossKind::Mae ? "mae" : "huber"},
        {"huber_delta", cfg.train.huber_delta},
    };
    json data;
    if (cfg.data.use_synth) {
        data["synth"] = {
            {"n_nodes", cfg.data.synth.n_nodes},
            {"topology", cfg.data.synth.topology},
            {"grid_rows", cfg.data.synth.grid_rows},
            {"grid_cols", cfg.data.synth.grid_cols},
            {"days", cfg.data.synth.days},
            {"interval_minutes", cfg.data.synth.interval_minutes},
            {"amplitude", cfg.data.synth.amplitude},
            {"noise_std", cfg.data.synth.noise_std},
            {"noise_rho", cfg.data.synth.noise_rho},
            {"phase_steps", cfg.data.synth.phase_steps},
            {"seed", cfg.data.synth.seed},
        };
    } else {
        data["path"] = cfg.data.path;
    }
    data["split"] = {
        {"train", cfg.data.split.train},
        {"val", cfg.data.split.val},
        {"test", cfg.data.split.test},
    };
    return json{{"model", model}, {"train", train}, {"data", data}};
}

} // namespace stpformer
