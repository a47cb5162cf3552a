#include "stpformer/commands.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "stpformer/checkpoint.hpp"
#include "stpformer/config.hpp"
#include "stpformer/data.hpp"
#include "stpformer/errors.hpp"
#include "stpformer/model.hpp"
#include "stpformer/training.hpp"

namespace stpformer {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

int run_guarded(const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const StateError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const InputError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const DimensionError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

DatasetBundle open_bundle(const DataConfig& data) {
    return data.use_synth ? synth_generate(data.synth, data.split)
                          : load_dataset(data.path, data.split);
}

json metrics_to_json(const Metrics& m) {
    json j;
    j["mae"] = m.mae;
    j["rmse"] = m.rmse;
    if (m.mape)
        j["mape"] = *m.mape;
    else
        j["mape"] = nullptr;
    return j;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open " + path.string() + " for writing");
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) throw DataError("short write to " + path.string());
}

// Rebuild the trained model against a freshly loaded dataset. The dataset
// must present the same node count, channel count and sampling cadence the
// checkpoint was fitted to; the calendar anchor may differ.
StpFormer restore_model(const Checkpoint& ckpt, DatasetBundle& bundle) {
    std::size_t n = bundle.graph.n_nodes;
    std::size_t f = bundle.series.shape()[2];
    if (n != ckpt.n_nodes)
        throw DataError("dataset has " + std::to_string(n) + " nodes but the checkpoint expects " +
                        std::to_string(ckpt.n_nodes));
    if (f != ckpt.d_in)
        throw DataError("dataset has " + std::to_string(f) +
                        " features but the checkpoint expects " + std::to_string(ckpt.d_in));
    if (bundle.meta.interval_minutes != ckpt.meta.interval_minutes)
        throw DataError("dataset samples every " + std::to_string(bundle.meta.interval_minutes) +
                        " minutes but the checkpoint expects " +
                        std::to_string(ckpt.meta.interval_minutes));

    ModelConfig mc = ckpt.config.model;
    mc.d_in = ckpt.d_in;
    mc.d_out = ckpt.d_out;
    StpFormer model(mc, bundle.meta, bundle.graph, static_cast<unsigned>(ckpt.config.train.seed));
    install_params(ckpt, model);

    // score on the stats frozen at training time, not refitted ones
    bundle.series = normalize(bundle.series, ckpt.norm);
    bundle.norm = ckpt.norm;
    bundle.normalized = true;
    return model;
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

} // namespace

int cmd_train(const std::string& config_path, const std::string& out_dir) {
    return run_guarded([&] {
        RunConfig cfg = load_run_config(config_path);
        DatasetBundle bundle = open_bundle(cfg.data);

        ModelConfig mc = cfg.model;
        mc.d_in = mc.d_out = bundle.series.shape()[2]; // channels come from the data
        mc.validate(bundle.graph.n_nodes);

        zscore(bundle);
        SplitWindows windows = make_windows(bundle, mc.m, mc.h);
        StpFormer model(mc, bundle.meta, bundle.graph, static_cast<unsigned>(cfg.train.seed));

        fs::create_directories(out_dir);
        fs::path out(out_dir);
        std::ofstream log(out / "train_log.jsonl", std::ios::binary | std::ios::trunc);
        if (!log) throw DataError("cannot open " + (out / "train_log.jsonl").string());

        TrainResult result = train_loop(model, bundle, windows, cfg.train, &log);
        log.close();

        EvalOutcome test = evaluate_split(model, bundle, windows.test, cfg.train);
        std::string metrics = metrics_to_json(test.metrics).dump(2) + "\n";
        write_text(out / "metrics.json", metrics);
        save_checkpoint(make_checkpoint(cfg, model, result, bundle.norm),
                        (out / "checkpoint.stpf").string());

        std::cout << "best epoch " << result.best_epoch << " (val loss "
                  << format_double(result.best_val_loss) << ")\n"
                  << "test metrics: " << metrics;
    });
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir) {
    return run_guarded([&] {
        Checkpoint ckpt = load_checkpoint(ckpt_path);
        DatasetBundle bundle = load_dataset(data_dir, ckpt.config.data.split);
        StpFormer model = restore_model(ckpt, bundle);

        SplitWindows windows = make_windows(bundle, model.cfg.m, model.cfg.h);
        EvalOutcome test = evaluate_split(model, bundle, windows.test, ckpt.config.train);

        std::string metrics = metrics_to_json(test.metrics).dump(2) + "\n";
        fs::path dir = fs::path(ckpt_path).parent_path();
        if (dir.empty()) dir = ".";
        write_text(dir / "eval_metrics.json", metrics);
        std::cout << metrics;
    });
}

int cmd_inspect(const std::string& ckpt_path, const std::string& data_dir, std::size_t window,
                std::size_t node, const std::string& out_dir) {
    return run_guarded([&] {
        Checkpoint ckpt = load_checkpoint(ckpt_path);
        DatasetBundle bundle = load_dataset(data_dir, ckpt.config.data.split);
        Tensor raw = bundle.series; // keep the unnormalized scale for reporting
        StpFormer model = restore_model(ckpt, bundle);

        std::size_t m = model.cfg.m, h = model.cfg.h;
        std::size_t n = bundle.graph.n_nodes;
        SplitWindows windows = make_windows(bundle, m, h);
        if (window >= windows.test.size())
            throw InputError("window index " + std::to_string(window) +
                             " out of range: the test split holds " +
                             std::to_string(windows.test.size()) + " windows");
        if (node >= n)
            throw InputError("node index " + std::to_string(node) + " out of range: " +
                             std::to_string(n) + " nodes");

        std::size_t start = windows.test[window];
        Tensor input = window_input(bundle.series, start, m);
        Tensor pred = denormalize(model.predict(input, static_cast<long>(start)), ckpt.norm);
        Tensor target = window_target(raw, start, m, h); // (h, N, F)

        std::size_t d_out = model.cfg.d_out;
        auto abs_err = [&](std::size_t t, std::size_t j) {
            // diagnostics track the first channel
            return std::abs(pred[(t * n + j) * d_out] - target[(t * n + j) * raw.shape()[2]]);
        };

        fs::create_directories(out_dir);
        fs::path out(out_dir);

        double max_err = 0.0;
        std::ostringstream csv;
        csv.precision(17);
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t t = 0; t < h; ++t) {
                double e = abs_err(t, j);
                max_err = std::max(max_err, e);
                csv << (t ? "," : "") << e;
            }
            csv << "\n";
        }
        write_text(out / "error_heatmap.csv", csv.str());

        // brighter pixel = larger error; all black when the forecast is exact
        std::string ppm = "P6\n" + std::to_string(h) + " " + std::to_string(n) + "\n255\n";
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t t = 0; t < h; ++t) {
                double e = abs_err(t, j);
                char v = static_cast<char>(
                    max_err > 0 ? static_cast<int>(std::lround(255.0 * e / max_err)) : 0);
                ppm.push_back(v);
                ppm.push_back(v);
                ppm.push_back(v);
            }
        write_text(out / "error_heatmap.ppm", ppm);

        std::ostringstream series;
        series.precision(17);
        series << "step,predicted,actual\n";
        for (std::size_t t = 0; t < h; ++t)
            series << start + m + t << "," << pred[(t * n + node) * d_out] << ","
                   << target[(t * n + node) * raw.shape()[2]] << "\n";
        write_text(out / "node_series.csv", series.str());

        std::cout << "window " << window << " (series row " << start << "), node " << node
                  << ", max abs error " << format_double(max_err) << "\n";
    });
}

int cmd_synth(const std::string& config_path, const std::string& out_dir) {
    return run_guarded([&] {
        RunConfig cfg = load_run_config(config_path);
        if (!cfg.data.use_synth)
            throw ConfigError("synth command needs a data.synth section, not a dataset path");
        DatasetBundle bundle = synth_generate(cfg.data.synth, cfg.data.split);
        save_dataset(bundle, out_dir);
        Shape s = bundle.series.shape();
        std::cout << "wrote " << s[0] << " steps x " << s[1] << " nodes x " << s[2]
                  << " features to " << out_dir << "\n";
    });
}

} // namespace stpformer
