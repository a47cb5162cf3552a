#include "stpformer/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "stpformer/errors.hpp"
#include "stpformer/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace stpformer {

SplitRanges apply_split(std::size_t n_steps, const SplitSpec& spec) {
    if (spec.train <= 0.0 || spec.val <= 0.0 || spec.test <= 0.0)
        throw ConfigError("split ratios must all be positive");
    double sum = spec.train + spec.val + spec.test;
    if (std::fabs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
    SplitRanges r;
    r.train_begin = 0;
    r.train_end = static_cast<std::size_t>(static_cast<double>(n_steps) * spec.train);
    r.val_end = static_cast<std::size_t>(static_cast<double>(n_steps) * (spec.train + spec.val));
    r.test_end = n_steps;
    return r;
}

NormStats fit_zscore(const Tensor& series, const SplitRanges& splits) {
    Shape s = series.shape();
    if (s.size() != 3) throw DimensionError("series must be (T, N, F)");
    std::size_t n = s[1], f = s[2];
    std::size_t rows = splits.train_len();
    if (rows == 0) throw ConfigError("training split is empty");

    NormStats stats;
    stats.mean = Tensor(Shape({f}));
    stats.stddev = Tensor(Shape({f}));
    std::size_t count = rows * n;
    for (std::size_t j = 0; j < f; ++j) {
        double sum = 0.0;
        for (std::size_t t = splits.train_begin; t < splits.train_end; ++t)
            for (std::size_t i = 0; i < n; ++i) sum += series[(t * n + i) * f + j];
        double mean = sum / static_cast<double>(count);
        double var = 0.0;
        for (std::size_t t = splits.train_begin; t < splits.train_end; ++t)
            for (std::size_t i = 0; i < n; ++i) {
                double d = series[(t * n + i) * f + j] - mean;
                var += d * d;
            }
        var /= static_cast<double>(count); // population convention
        double sd = std::sqrt(var);
        stats.mean[j] = mean;
        stats.stddev[j] = (sd < 1e-12) ? 1.0 : sd;
    }
    return stats;
}

namespace {

std::size_t feature_extent(const Tensor& x, const NormStats& stats) {
    Shape s = x.shape();
    if (s.empty() || s.back() != stats.mean.size())
        throw DimensionError("last axis must match the per-feature stats width");
    return s.back();
}

} // namespace

Tensor normalize(const Tensor& x, const NormStats& stats) {
    std::size_t f = feature_extent(x, stats);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i)
        out[i] = (x[i] - stats.mean[i % f]) / stats.stddev[i % f];
    return out;
}

Tensor denormalize(const Tensor& x, const NormStats& stats) {
    std::size_t f = feature_extent(x, stats);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i)
        out[i] = x[i] * stats.stddev[i % f] + stats.mean[i % f];
    return out;
}

void zscore(DatasetBundle& bundle) {
    if (bundle.normalized) throw StateError("series is already normalized");
    bundle.norm = fit_zscore(bundle.series, bundle.splits);
    bundle.series = normalize(bundle.series, bundle.norm);
    bundle.normalized = true;
}

SplitWindows make_windows(const DatasetBundle& bundle, std::size_t m, std::size_t h) {
    if (m == 0 || h == 0) throw ConfigError("window lengths m and h must be positive");
    std::size_t need = m + h;
    auto slice = [&](std::size_t begin, std::size_t end, const char* name) {
        std::size_t len = end - begin;
        if (len < need) {
            std::ostringstream msg;
            msg << "the " << name << " split holds " << len << " rows, fewer than m+h=" << need;
            throw ConfigError(msg.str());
        }
        std::vector<std::size_t> starts;
        starts.reserve(len - need + 1);
        for (std::size_t s = begin; s + need <= end; ++s) starts.push_back(s);
        return starts;
    };
    const SplitRanges& r = bundle.splits;
    SplitWindows w;
    w.train = slice(r.train_begin, r.train_end, "train");
    w.val = slice(r.train_end, r.val_end, "val");
    w.test = slice(r.val_end, r.test_end, "test");
    return w;
}

Tensor window_input(const Tensor& series, std::size_t start, std::size_t m) {
    Shape s = series.shape();
    if (s.size() != 3) throw DimensionError("series must be (T, N, F)");
    if (start + m > s[0]) throw InputError("window input range exceeds the series");
    std::size_t row = s[1] * s[2];
    Tensor out(Shape({m, s[1], s[2]}));
    for (std::size_t i = 0; i < m * row; ++i) out[i] = series[start * row + i];
    return out;
}

Tensor window_target(const Tensor& series, std::size_t start, std::size_t m, std::size_t h) {
    Shape s = series.shape();
    if (s.size() != 3) throw DimensionError("series must be (T, N, F)");
    if (start + m + h > s[0]) throw InputError("window target range exceeds the series");
    std::size_t row = s[1] * s[2];
    Tensor out(Shape({h, s[1], s[2]}));
    for (std::size_t i = 0; i < h * row; ++i) out[i] = series[(start + m) * row + i];
    return out;
}

DatasetBundle synth_generate(const SynthParams& params, const SplitSpec& spec) {
    if (params.days == 0) throw ConfigError("synthetic series needs at least one day");
    if (params.noise_std < 0.0) throw ConfigError("noise_std must be non-negative");
    if (params.noise_rho < 0.0 || params.noise_rho >= 1.0)
        throw ConfigError("noise_rho must lie in [0, 1)");

    DatasetBundle bundle;
    if (params.topology == "ring") {
        if (params.n_nodes < 2) throw ConfigError("a ring needs at least two nodes");
        std::vector<std::pair<std::size_t, std::size_t>> edges;
        for (std::size_t i = 0; i < params.n_nodes; ++i) {
            std::size_t j = (i + 1) % params.n_nodes;
            edges.push_back({i, j});
            edges.push_back({j, i});
        }
        bundle.graph = build_adjacency(params.n_nodes, edges);
    } else if (params.topology == "grid") {
        if (params.grid_rows == 0 || params.grid_cols == 0)
            throw ConfigError("grid topology needs positive grid_rows and grid_cols");
        if (params.grid_rows * params.grid_cols != params.n_nodes)
            throw ConfigError("grid_rows * grid_cols must equal n_nodes");
        bundle.graph = build_grid(params.grid_rows, params.grid_cols);
    } else {
        throw ConfigError("unknown topology '" + params.topology + "'");
    }

    bundle.meta = TimestampMeta{};
    bundle.meta.interval_minutes = params.interval_minutes;
    bundle.meta.validate();

    std::size_t spd = bundle.meta.steps_per_day();
    std::size_t n_steps = params.days * spd;
    std::size_t n = params.n_nodes;
    bundle.series = Tensor(Shape({n_steps, n, 1}));

    std::vector<std::size_t> hops = hop_distances(bundle.graph, 0);
    double two_pi = 2.0 * std::numbers::pi;
    double innovation = params.noise_std * std::sqrt(1.0 - params.noise_rho * params.noise_rho);
    for (std::size_t node = 0; node < n; ++node) {
        double phase = (hops[node] == SIZE_MAX)
                           ? 0.0
                           : static_cast<double>(params.phase_steps * hops[node]);
        Rng rng(params.seed ^ (0x9E3779B97F4A7C15ULL * (node + 1)));
        double eps = 0.0;
        for (std::size_t t = 0; t < n_steps; ++t) {
            // reduce the argument so equal daily slots give bitwise-equal values
            double resid = std::fmod(static_cast<double>(t) - phase, static_cast<double>(spd));
            if (resid < 0.0) resid += static_cast<double>(spd);
            double base = params.amplitude * std::sin(two_pi * resid / static_cast<double>(spd));
            if (params.noise_std > 0.0) {
                double z = rng.normal();
                eps = (t == 0) ? params.noise_std * z : params.noise_rho * eps + innovation * z;
            }
            bundle.series[(t * n + node) * 1] = base + eps;
        }
    }

    bundle.splits = apply_split(n_steps, spec);
    return bundle;
}

Tensor daily_profile(const DatasetBundle& bundle) {
    Shape s = bundle.series.shape();
    if (s.size() != 3) throw DimensionError("series must be (T, N, F)");
    std::size_t n = s[1], f = s[2];
    std::size_t spd = bundle.meta.steps_per_day();
    if (bundle.splits.train_len() < spd)
        throw ConfigError("training split must cover at least one full day");

    Tensor prof(Shape({spd, n, f}));
    std::vector<std::size_t> counts(spd, 0);
    for (std::size_t t = bundle.splits.train_begin; t < bundle.splits.train_end; ++t) {
        std::size_t slot = periodic_indices(bundle.meta, static_cast<long>(t)).second;
        counts[slot] += 1;
        for (std::size_t i = 0; i < n * f; ++i) prof[slot * n * f + i] += bundle.series[t * n * f + i];
    }
    for (std::size_t slot = 0; slot < spd; ++slot)
        for (std::size_t i = 0; i < n * f; ++i)
            prof[slot * n * f + i] /= static_cast<double>(counts[slot]);
    return prof;
}

Tensor historical_average_predictions(const DatasetBundle& bundle,
                                      const std::vector<std::size_t>& starts, std::size_t m,
                                      std::size_t h) {
    Tensor prof = daily_profile(bundle);
    Shape s = bundle.series.shape();
    std::size_t n = s[1], f = s[2];
    std::size_t spd = prof.shape()[0];
    Tensor out(Shape({starts.size(), h, n, f}));
    for (std::size_t w = 0; w < starts.size(); ++w)
        for (std::size_t j = 0; j < h; ++j) {
            std::size_t t = starts[w] + m + j;
            if (t >= s[0]) throw InputError("baseline window exceeds the series");
            std::size_t slot = periodic_indices(bundle.meta, static_cast<long>(t)).second;
            (void)spd;
            for (std::size_t i = 0; i < n * f; ++i)
                out[((w * h + j) * n * f) + i] = prof[slot * n * f + i];
        }
    return out;
}

std::string format_timestamp(const TimestampMeta& m) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:00", m.year, m.month, m.day, m.hour,
                  m.minute);
    return buf;
}

void parse_timestamp(const std::string& s, TimestampMeta& m) {
    int y, mo, d, hh, mi, ss;
    if (s.size() != 19 ||
        std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d", &y, &mo, &d, &hh, &mi, &ss) != 6)
        throw DataError("start_timestamp must look like 2016-07-04T00:00:00");
    if (ss != 0) throw DataError("start_timestamp seconds must be zero");
    m.year = y;
    m.month = mo;
    m.day = d;
    m.hour = hh;
    m.minute = mi;
}

DatasetBundle load_dataset(const std::string& dir, const SplitSpec& spec) {
    fs::path root(dir);

    std::ifstream meta_in(root / "meta.json");
    if (!meta_in) throw DataError("missing meta.json in " + dir);
    json j = json::parse(meta_in, nullptr, false);
    if (j.is_discarded()) throw DataError("meta.json is not valid JSON");
    if (!j.is_object()) throw DataError("meta.json must hold a JSON object");

    static const std::vector<std::string> allowed = {
        "version",         "n_nodes", "n_steps", "n_features", "interval_minutes",
        "start_timestamp", "layout",  "kind",    "grid"};
    for (const auto& item : j.items())
        if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end())
            throw DataError("meta.json: unknown key '" + item.key() + "'");

    auto need_uint = [&](const char* k) -> std::size_t {
        if (!j.contains(k)) throw DataError(std::string("meta.json: missing key '") + k + "'");
        if (!j.at(k).is_number_unsigned())
            throw DataError(std::string("meta.json: '") + k + "' must be a non-negative integer");
        return j.at(k).get<std::size_t>();
    };
    auto need_string = [&](const char* k) -> std::string {
        if (!j.contains(k)) throw DataError(std::string("meta.json: missing key '") + k + "'");
        if (!j.at(k).is_string())
            throw DataError(std::string("meta.json: '") + k + "' must be a string");
        return j.at(k).get<std::string>();
    };

    if (need_uint("version") != 1) throw DataError("unsupported dataset version");
    std::size_t n_nodes = need_uint("n_nodes");
    std::size_t n_steps = need_uint("n_steps");
    std::size_t n_features = need_uint("n_features");
    if (n_nodes == 0 || n_steps == 0 || n_features == 0)
        throw DataError("meta.json: n_nodes, n_steps and n_features must be positive");
    if (need_string("layout") != "time,node,feature")
        throw DataError("meta.json: unsupported layout");

    DatasetBundle bundle;
    bundle.meta.interval_minutes = static_cast<int>(need_uint("interval_minutes"));
    parse_timestamp(need_string("start_timestamp"), bundle.meta);
    try {
        bundle.meta.validate();
    } catch (const ConfigError& e) {
        throw DataError(std::string("meta.json: ") + e.what());
    }

    std::string kind = need_string("kind");
    if (kind == "grid") {
        if (!j.contains("grid") || !j.at("grid").is_object())
            throw DataError("meta.json: grid kind needs a grid object");
        const json& g = j.at("grid");
        for (const auto& item : g.items())
            if (item.key() != "rows" && item.key() != "cols")
                throw DataError("meta.json: unknown grid key '" + item.key() + "'");
        if (!g.contains("rows") || !g.contains("cols") || !g.at("rows").is_number_unsigned() ||
            !g.at("cols").is_number_unsigned())
            throw DataError("meta.json: grid rows and cols must be non-negative integers");
        std::size_t rows = g.at("rows").get<std::size_t>();
        std::size_t cols = g.at("cols").get<std::size_t>();
        if (rows == 0 || cols == 0) throw DataError("meta.json: grid dims must be positive");
        if (rows * cols != n_nodes)
            throw DataError("meta.json: grid rows*cols must equal n_nodes");
        bundle.graph = build_grid(rows, cols);
    } else if (kind == "graph") {
        if (j.contains("grid")) throw DataError("meta.json: grid dims given for graph kind");
        std::ifstream edges_in(root / "edges.csv");
        if (!edges_in) throw DataError("missing edges.csv in " + dir);
        std::string line;
        if (!std::getline(edges_in, line)) throw DataError("edges.csv is empty");
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line != "src,dst") throw DataError("edges.csv must start with the header src,dst");
        std::vector<std::pair<std::size_t, std::size_t>> edges;
        std::size_t lineno = 1;
        while (std::getline(edges_in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            unsigned long long src, dst;
            char extra;
            if (std::sscanf(line.c_str(), "%llu,%llu%c", &src, &dst, &extra) != 2)
                throw DataError("edges.csv: malformed line " + std::to_string(lineno));
            if (src >= n_nodes || dst >= n_nodes)
                throw DataError("edges.csv: node index out of range on line " +
                                std::to_string(lineno));
            if (src == dst)
                throw DataError("edges.csv: self loop on line " + std::to_string(lineno));
            edges.push_back({static_cast<std::size_t>(src), static_cast<std::size_t>(dst)});
        }
        bundle.graph = build_adjacency(n_nodes, edges);
    } else {
        throw DataError("meta.json: kind must be 'graph' or 'grid'");
    }

    std::ifstream data_in(root / "data.f32", std::ios::binary);
    if (!data_in) throw DataError("missing data.f32 in " + dir);
    data_in.seekg(0, std::ios::end);
    std::size_t bytes = static_cast<std::size_t>(data_in.tellg());
    data_in.seekg(0, std::ios::beg);
    std::size_t expect = n_steps * n_nodes * n_features;
    if (bytes != expect * sizeof(float)) {
        std::ostringstream msg;
        msg << "data.f32 holds " << bytes / sizeof(float) << " floats but meta declares "
            << expect;
        throw DataError(msg.str());
    }
    std::vector<float> buf(expect);
    data_in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
    if (!data_in) throw DataError("failed to read data.f32");
    bundle.series = Tensor(Shape({n_steps, n_nodes, n_features}));
    for (std::size_t i = 0; i < expect; ++i) bundle.series[i] = static_cast<double>(buf[i]);

    bundle.splits = apply_split(n_steps, spec);
    return bundle;
}

void save_dataset(const DatasetBundle& bundle, const std::string& dir) {
    Shape s = bundle.series.shape();
    if (s.size() != 3) throw DimensionError("series must be (T, N, F)");
    fs::create_directories(dir);
    fs::path root(dir);

    json j;
    j["version"] = 1;
    j["n_nodes"] = s[1];
    j["n_steps"] = s[0];
    j["n_features"] = s[2];
    j["interval_minutes"] = bundle.meta.interval_minutes;
    j["start_timestamp"] = format_timestamp(bundle.meta);
    j["layout"] = "time,node,feature";
    if (bundle.graph.kind == RoadGraph::Kind::Grid) {
        j["kind"] = "grid";
        j["grid"] = {{"rows", bundle.graph.rows}, {"cols", bundle.graph.cols}};
    } else {
        j["kind"] = "graph";
    }
    std::ofstream meta_out(root / "meta.json", std::ios::binary);
    if (!meta_out) throw DataError("cannot write meta.json in " + dir);
    meta_out << j.dump(2) << "\n";

    std::vector<float> buf(bundle.series.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(bundle.series[i]);
    std::ofstream data_out(root / "data.f32", std::ios::binary);
    if (!data_out) throw DataError("cannot write data.f32 in " + dir);
    data_out.write(reinterpret_cast<const char*>(buf.data()),
                   static_cast<std::streamsize>(buf.size() * sizeof(float)));

    if (bundle.graph.kind != RoadGraph::Kind::Grid) {
        std::ofstream edges_out(root / "edges.csv", std::ios::binary);
        if (!edges_out) throw DataError("cannot write edges.csv in " + dir);
        edges_out << "src,dst\n";
        std::size_t n = bundle.graph.n_nodes;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < n; ++k)
                if (bundle.graph.adjacency[i * n + k] != 0.0) edges_out << i << "," << k << "\n";
    }
}

} // namespace stpformer
