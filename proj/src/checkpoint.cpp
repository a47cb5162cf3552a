#include "stpformer/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "json.hpp"
#include "stpformer/errors.hpp"

namespace stpformer {

namespace {

using nlohmann::json;

// Eight magic bytes plus a newline so `head -c 10` identifies the file.
constexpr char kMagic[] = "STPFCKPT1\n";
constexpr std::size_t kMagicLen = 10;

void append_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t read_u64(const std::string& buf, std::size_t off) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
    return v;
}

json shape_to_json(const Shape& s) {
    json a = json::array();
    for (std::size_t d : s) a.push_back(d);
    return a;
}

// host doubles are written verbatim; the format assumes IEEE-754 little-endian
void append_block(std::string& out, const Tensor& t) {
    append_u64(out, static_cast<std::uint64_t>(t.size() * sizeof(double)));
    std::size_t off = out.size();
    out.resize(off + t.size() * sizeof(double));
    std::memcpy(out.data() + off, t.data(), t.size() * sizeof(double));
}

const json& need(const json& j, const char* key) {
    if (!j.contains(key)) throw DataError(std::string("checkpoint header is missing ") + key);
    return j.at(key);
}

std::size_t need_uint(const json& j, const char* key) {
    const json& v = need(j, key);
    if (!v.is_number_unsigned())
        throw DataError(std::string("checkpoint field ") + key +
                        " must be a non-negative integer");
    return v.get<std::size_t>();
}

double need_number(const json& j, const char* key) {
    const json& v = need(j, key);
    if (!v.is_number()) throw DataError(std::string("checkpoint field ") + key + " must be a number");
    return v.get<double>();
}

} // namespace

Checkpoint make_checkpoint(const RunConfig& config, const StpFormer& model,
                           const TrainResult& result, const NormStats& norm) {
    Checkpoint c;
    c.config = config;
    c.d_in = model.cfg.d_in;
    c.d_out = model.cfg.d_out;
    c.n_nodes = model.n_nodes;
    c.meta = model.meta;
    for (const auto& [name, dual] : model.params.items()) c.params.emplace(name, dual.value);
    c.optimizer = result.optimizer;
    c.norm = norm;
    c.best_epoch = result.best_epoch;
    c.best_val_loss = result.best_val_loss;
    return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    json tensors = json::array();
    auto list = [&tensors](const std::string& name, const char* kind, const Tensor& t) {
        tensors.push_back(json{{"name", name}, {"kind", kind}, {"shape", shape_to_json(t.shape())}});
    };
    for (const auto& [name, t] : ckpt.params) list(name, "param", t);
    for (const auto& [name, t] : ckpt.optimizer.m1) list(name, "m1", t);
    for (const auto& [name, t] : ckpt.optimizer.m2) list(name, "m2", t);
    list("norm.mean", "stat", ckpt.norm.mean);
    list("norm.stddev", "stat", ckpt.norm.stddev);

    json header = {
        {"version", 1},
        {"config", run_config_to_json(ckpt.config)},
        {"io",
         {{"d_in", ckpt.d_in},
          {"d_out", ckpt.d_out},
          {"n_nodes", ckpt.n_nodes},
          {"interval_minutes", ckpt.meta.interval_minutes},
          {"start_timestamp", format_timestamp(ckpt.meta)}}},
        {"best_epoch", ckpt.best_epoch},
        {"best_val_loss", ckpt.best_val_loss},
        {"optimizer", {{"step", ckpt.optimizer.step}, {"weight_decay", ckpt.optimizer.weight_decay}}},
        {"tensors", tensors},
    };

    std::string out(kMagic, kMagicLen);
    std::string hs = header.dump(); // sorted keys, shortest-roundtrip doubles
    append_u64(out, hs.size());
    out += hs;
    for (const auto& [name, t] : ckpt.params) append_block(out, t);
    for (const auto& [name, t] : ckpt.optimizer.m1) append_block(out, t);
    for (const auto& [name, t] : ckpt.optimizer.m2) append_block(out, t);
    append_block(out, ckpt.norm.mean);
    append_block(out, ckpt.norm.stddev);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open " + path + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (buf.size() < kMagicLen + 8 || std::memcmp(buf.data(), kMagic, kMagicLen) != 0)
        throw DataError(path + " is not a checkpoint file");
    std::uint64_t hlen = read_u64(buf, kMagicLen);
    std::size_t body = kMagicLen + 8;
    if (body + hlen > buf.size()) throw DataError("checkpoint header is truncated");

    json header;
    try {
        header = json::parse(buf.substr(body, hlen));
    } catch (const json::parse_error& e) {
        throw DataError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }

    if (need_uint(header, "version") != 1) throw DataError("unsupported checkpoint version");

    Checkpoint c;
    try {
        c.config = parse_run_config(need(header, "config"));
    } catch (const ConfigError& e) {
        throw DataError(std::string("checkpoint embeds an invalid run config: ") + e.what());
    }
    const json& io = need(header, "io");
    c.d_in = need_uint(io, "d_in");
    c.d_out = need_uint(io, "d_out");
    c.n_nodes = need_uint(io, "n_nodes");
    const json& ts = need(io, "start_timestamp");
    if (!ts.is_string()) throw DataError("checkpoint start_timestamp must be a string");
    parse_timestamp(ts.get<std::string>(), c.meta);
    c.meta.interval_minutes = static_cast<int>(need_uint(io, "interval_minutes"));
    try {
        c.meta.validate();
    } catch (const ConfigError& e) {
        throw DataError(std::string("checkpoint calendar is invalid: ") + e.what());
    }
    c.best_epoch = need_uint(header, "best_epoch");
    c.best_val_loss = need_number(header, "best_val_loss");
    const json& opt = need(header, "optimizer");
    c.optimizer.step = need_uint(opt, "step");
    c.optimizer.weight_decay = need_number(opt, "weight_decay");

    const json& tensors = need(header, "tensors");
    if (!tensors.is_array()) throw DataError("checkpoint tensors field must be an array");
    std::size_t off = body + hlen;
    bool saw_mean = false, saw_std = false;
    for (const json& entry : tensors) {
        if (!entry.is_object()) throw DataError("checkpoint tensor entry must be an object");
        const json& jn = need(entry, "name");
        const json& jk = need(entry, "kind");
        const json& js = need(entry, "shape");
        if (!jn.is_string() || !jk.is_string() || !js.is_array())
            throw DataError("malformed checkpoint tensor entry");
        std::string name = jn.get<std::string>();
        std::string kind = jk.get<std::string>();
        Shape shape;
        std::size_t count = 1;
        for (const json& d : js) {
            if (!d.is_number_unsigned())
                throw DataError("checkpoint tensor shape must hold non-negative integers");
            shape.push_back(d.get<std::size_t>());
            count *= shape.back();
        }
        if (off + 8 > buf.size()) throw DataError("checkpoint is truncated at tensor " + name);
        std::uint64_t bytes = read_u64(buf, off);
        off += 8;
        if (bytes != count * sizeof(double))
            throw DataError("tensor block length mismatch for " + name);
        if (off + bytes > buf.size()) throw DataError("checkpoint is truncated at tensor " + name);
        Tensor t(shape);
        std::memcpy(t.data(), buf.data() + off, bytes);
        off += bytes;

        if (kind == "param") {
            if (!c.params.emplace(name, std::move(t)).second)
                throw DataError("duplicate checkpoint parameter " + name);
        } else if (kind == "m1") {
            if (!c.optimizer.m1.emplace(name, std::move(t)).second)
                throw DataError("duplicate optimizer moment for " + name);
        } else if (kind == "m2") {
            if (!c.optimizer.m2.emplace(name, std::move(t)).second)
                throw DataError("duplicate optimizer moment for " + name);
        } else if (kind == "stat") {
            if (name == "norm.mean") {
                c.norm.mean = std::move(t);
                saw_mean = true;
            } else if (name == "norm.stddev") {
                c.norm.stddev = std::move(t);
                saw_std = true;
            } else {
                throw DataError("unknown checkpoint stat " + name);
            }
        } else {
            throw DataError("unknown checkpoint tensor kind " + kind);
        }
    }
    if (off != buf.size()) throw DataError("checkpoint has trailing bytes");
    if (!saw_mean || !saw_std) throw DataError("checkpoint is missing normalization stats");
    return c;
}

void install_params(const Checkpoint& ckpt, StpFormer& model) {
    auto& items = model.params.items();
    if (items.size() != ckpt.params.size())
        throw DataError("checkpoint holds " + std::to_string(ckpt.params.size()) +
                        " parameters but the model expects " + std::to_string(items.size()));
    for (auto& [name, dual] : items) {
        auto it = ckpt.params.find(name);
        if (it == ckpt.params.end())
            throw DataError("checkpoint is missing parameter " + name);
        if (it->second.shape() != dual.value.shape())
            throw DataError("checkpoint shape mismatch for parameter " + name);
        dual.value = it->second;
    }
}

} // namespace stpformer
