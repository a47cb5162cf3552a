#include "stpformer/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "stpformer/errors.hpp"
#include "stpformer/rng.hpp"

namespace stpformer {

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (base_lr <= 0.0) throw ConfigError("base_lr must be positive");
    if (warmup_epochs == 0) throw ConfigError("warmup_epochs must be positive");
    if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
    if (warmup_epochs >= max_epochs)
        throw ConfigError("warmup_epochs must be smaller than max_epochs");
    if (patience == 0) throw ConfigError("patience must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
    if (grad_clip < 0.0) throw ConfigError("grad_clip must be non-negative");
    if (loss == LossKind::Huber && huber_delta <= 0.0)
        throw ConfigError("huber_delta must be positive");
}

void MetricsAccumulator::add(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape())
        throw DimensionError("metrics need predictions and targets of equal shape");
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double e = pred[i] - target[i];
        abs_sum += std::fabs(e);
        sq_sum += e * e;
        if (std::fabs(target[i]) > floor) {
            mape_sum += std::fabs(e / target[i]);
            mape_count += 1;
        }
    }
    count += pred.size();
}

Metrics MetricsAccumulator::finalize() const {
    if (count == 0) throw InputError("no entries accumulated");
    Metrics m;
    m.mae = abs_sum / static_cast<double>(count);
    m.rmse = std::sqrt(sq_sum / static_cast<double>(count));
    if (mape_count > 0) m.mape = 100.0 * mape_sum / static_cast<double>(mape_count);
    return m;
}

Metrics compute_metrics(const Tensor& pred, const Tensor& target, double mape_floor) {
    MetricsAccumulator acc;
    acc.floor = mape_floor;
    acc.add(pred, target);
    return acc.finalize();
}

double lr_at(const TrainConfig& cfg, std::size_t epoch) {
    if (epoch >= cfg.max_epochs) throw InputError("epoch outside the configured schedule");
    if (epoch < cfg.warmup_epochs)
        return cfg.base_lr * static_cast<double>(epoch + 1) /
               static_cast<double>(cfg.warmup_epochs);
    double progress = static_cast<double>(epoch - cfg.warmup_epochs) /
                      static_cast<double>(cfg.max_epochs - cfg.warmup_epochs);
    return cfg.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

OptimizerState make_optimizer(const ParameterStore& params, double weight_decay) {
    OptimizerState s;
    s.weight_decay = weight_decay;
    for (const auto& [name, dt] : params.items()) {
        s.m1.emplace(name, Tensor::zeros(dt.value.shape()));
        s.m2.emplace(name, Tensor::zeros(dt.value.shape()));
    }
    return s;
}

void adamw_step(ParameterStore& params, OptimizerState& state, double lr, double beta1,
                double beta2, double eps) {
    state.step += 1;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (auto& [name, dt] : params.items()) {
        auto m_it = state.m1.find(name);
        auto v_it = state.m2.find(name);
        if (m_it == state.m1.end() || v_it == state.m2.end())
            throw StateError("optimizer state does not cover parameter '" + name + "'");
        Tensor& m = m_it->second;
        Tensor& v = v_it->second;
        for (std::size_t i = 0; i < dt.value.size(); ++i) {
            double g = dt.grad[i];
            dt.value[i] *= 1.0 - lr * state.weight_decay; // decoupled decay first
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            double m_hat = m[i] / bc1;
            double v_hat = v[i] / bc2;
            dt.value[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
}

void clip_gradients(ParameterStore& params, double max_norm) {
    if (max_norm <= 0.0) return;
    double sq = 0.0;
    for (const auto& [name, dt] : params.items())
        for (std::size_t i = 0; i < dt.grad.size(); ++i) sq += dt.grad[i] * dt.grad[i];
    double norm = std::sqrt(sq);
    if (norm <= max_norm) return;
    double scale = max_norm / norm;
    for (auto& [name, dt] : params.items())
        for (std::size_t i = 0; i < dt.grad.size(); ++i) dt.grad[i] *= scale;
}

Batch make_batch(const DatasetBundle& bundle, const std::vector<std::size_t>& starts,
                 std::size_t m, std::size_t h) {
    if (starts.empty()) throw InputError("a batch needs at least one window");
    Shape s = bundle.series.shape();
    std::size_t n = s[1], f = s[2];
    std::size_t b = starts.size();
    Batch batch;
    batch.input = Tensor(Shape({b, m, n, f}));
    batch.target_raw = Tensor(Shape({b, h, n, f}));
    batch.t0.reserve(b);
    std::size_t in_sz = m * n * f, tg_sz = h * n * f;
    for (std::size_t i = 0; i < b; ++i) {
        Tensor in = window_input(bundle.series, starts[i], m);
        Tensor tg = window_target(bundle.series, starts[i], m, h);
        if (bundle.normalized) tg = denormalize(tg, bundle.norm);
        for (std::size_t k = 0; k < in_sz; ++k) batch.input[i * in_sz + k] = in[k];
        for (std::size_t k = 0; k < tg_sz; ++k) batch.target_raw[i * tg_sz + k] = tg[k];
        batch.t0.push_back(static_cast<long>(starts[i]));
    }
    return batch;
}

Var denormalized_forward(Tape& t, StpFormer& model, const Batch& batch, const NormStats& norm) {
    Var y = model.forward(t, batch.input, batch.t0);
    Shape ys = t.val(y).shape();
    std::size_t f = norm.stddev.size();
    if (ys.back() != f) throw DimensionError("model output width does not match the stats");
    Tensor sig(ys), mu(ys);
    for (std::size_t i = 0; i < sig.size(); ++i) {
        sig[i] = norm.stddev[i % f];
        mu[i] = norm.mean[i % f];
    }
    return t.add(t.mul(y, t.constant(sig)), t.constant(mu));
}

Var prediction_loss(Tape& t, Var y_den, const Tensor& target_raw, LossKind kind,
                    double huber_delta) {
    Var diff = t.sub(y_den, t.constant(target_raw));
    if (kind == LossKind::Huber) return t.mean_all(t.huber(diff, huber_delta));
    return t.mean_all(t.abs_v(diff));
}

double loss_and_grad(StpFormer& model, const Batch& batch, const NormStats& norm, LossKind kind,
                     double huber_delta) {
    model.params.zero_grads();
    Tape t;
    Var y_den = denormalized_forward(t, model, batch, norm);
    Var loss = prediction_loss(t, y_den, batch.target_raw, kind, huber_delta);
    double value = t.val(loss)[0];
    if (!std::isfinite(value)) throw NumericalError("non-finite training loss");
    t.backward(loss);
    return value;
}

EvalOutcome evaluate_split(StpFormer& model, const DatasetBundle& bundle,
                           const std::vector<std::size_t>& starts, const TrainConfig& cfg) {
    if (starts.empty()) throw ConfigError("cannot evaluate an empty split");
    MetricsAccumulator acc;
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t pos = 0; pos < starts.size(); pos += cfg.batch_size) {
        std::size_t end = std::min(starts.size(), pos + cfg.batch_size);
        std::vector<std::size_t> chunk(starts.begin() + static_cast<std::ptrdiff_t>(pos),
                                       starts.begin() + static_cast<std::ptrdiff_t>(end));
        Batch b = make_batch(bundle, chunk, model.cfg.m, model.cfg.h);
        Tape t(false);
        Var y_den = denormalized_forward(t, model, b, bundle.norm);
        Var loss = prediction_loss(t, y_den, b.target_raw, cfg.loss, cfg.huber_delta);
        double lv = t.val(loss)[0];
        if (!std::isfinite(lv)) throw NumericalError("non-finite validation loss");
        acc.add(t.val(y_den), b.target_raw);
        loss_sum += lv * static_cast<double>(chunk.size());
        seen += chunk.size();
    }
    EvalOutcome out;
    out.metrics = acc.finalize();
    out.loss = loss_sum / static_cast<double>(seen);
    return out;
}

namespace {

void write_log_line(std::ostream& os, const EpochRecord& r) {
    std::ostringstream line;
    line.precision(17);
    line << "{\"epoch\":" << r.epoch << ",\"lr\":" << r.lr << ",\"train_loss\":" << r.train_loss
         << ",\"val_loss\":" << r.val_loss << ",\"val_mae\":" << r.val.mae
         << ",\"val_rmse\":" << r.val.rmse << ",\"val_mape\":";
    if (r.val.mape)
        line << *r.val.mape;
    else
        line << "null";
    line << "}";
    os << line.str() << "\n";
}

std::map<std::string, Tensor> snapshot_params(const ParameterStore& params) {
    std::map<std::string, Tensor> snap;
    for (const auto& [name, dt] : params.items()) snap.emplace(name, dt.value);
    return snap;
}

void restore_params(ParameterStore& params, const std::map<std::string, Tensor>& snap) {
    for (auto& [name, dt] : params.items()) dt.value = snap.at(name);
}

} // namespace

TrainResult train_loop(StpFormer& model, const DatasetBundle& bundle, const SplitWindows& windows,
                       const TrainConfig& cfg, std::ostream* log_stream) {
    cfg.validate();
    if (!bundle.normalized) throw StateError("train_loop expects a zscored bundle");
    if (windows.train.empty()) throw ConfigError("training split has no windows");
    if (windows.val.empty()) throw ConfigError("validation split has no windows");

    OptimizerState opt = make_optimizer(model.params, cfg.weight_decay);
    Rng shuffle_rng(cfg.seed);
    std::vector<std::size_t> order = windows.train;

    TrainResult result;
    double best = std::numeric_limits<double>::infinity();
    std::map<std::string, Tensor> best_params = snapshot_params(model.params);
    OptimizerState best_opt = opt;
    std::size_t since_improvement = 0;

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        double lr = lr_at(cfg, epoch);
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t pos = 0; pos < order.size(); pos += cfg.batch_size) {
            std::size_t end = std::min(order.size(), pos + cfg.batch_size);
            std::vector<std::size_t> chunk(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                           order.begin() + static_cast<std::ptrdiff_t>(end));
            Batch b = make_batch(bundle, chunk, model.cfg.m, model.cfg.h);
            double lv = loss_and_grad(model, b, bundle.norm, cfg.loss, cfg.huber_delta);
            if (cfg.grad_clip > 0.0) clip_gradients(model.params, cfg.grad_clip);
            adamw_step(model.params, opt, lr);
            loss_sum += lv * static_cast<double>(chunk.size());
            seen += chunk.size();
        }

        EvalOutcome v = evaluate_split(model, bundle, windows.val, cfg);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train_loss = loss_sum / static_cast<double>(seen);
        rec.val_loss = v.loss;
        rec.val = v.metrics;
        result.log.push_back(rec);
        if (log_stream) write_log_line(*log_stream, rec);

        if (v.loss < best) {
            best = v.loss;
            result.best_epoch = epoch;
            since_improvement = 0;
            best_params = snapshot_params(model.params);
            best_opt = opt;
        } else {
            since_improvement += 1;
            if (since_improvement > cfg.patience) break;
        }
    }

    restore_params(model.params, best_params);
    result.best_val_loss = best;
    result.optimizer = std::move(best_opt);
    return result;
}

double finite_diff_check(ParameterStore& params, const std::function<Var(Tape&)>& scalar_loss,
                         std::size_t n_probes, std::uint64_t seed, double step) {
    if (n_probes == 0) throw InputError("finite_diff_check needs at least one probe");
    params.zero_grads();
    {
        Tape t;
        t.backward(scalar_loss(t));
    }
    auto eval = [&] {
        Tape t(false);
        return t.val(scalar_loss(t))[0];
    };
    std::vector<std::pair<DualTensor*, std::size_t>> coords;
    for (auto& [name, dt] : params.items())
        for (std::size_t i = 0; i < dt.value.size(); ++i) coords.push_back({&dt, i});
    if (coords.empty()) throw InputError("parameter store is empty");

    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t p = 0; p < n_probes; ++p) {
        auto [dt, i] = coords[rng.uniform_int(0, coords.size() - 1)];
        double orig = dt->value[i];
        dt->value[i] = orig + step;
        double fp = eval();
        dt->value[i] = orig - step;
        double fm = eval();
        dt->value[i] = orig;
        double numeric = (fp - fm) / (2.0 * step);
        double analytic = dt->grad[i];
        double denom = std::max({1e-3, std::fabs(analytic), std::fabs(numeric)});
        worst = std::max(worst, std::fabs(analytic - numeric) / denom);
    }
    return worst;
}

double finite_diff_check(StpFormer& model, const DatasetBundle& bundle,
                         const std::vector<std::size_t>& starts, std::size_t n_probes,
                         std::uint64_t seed, double step) {
    if (model.params.total_coords() > 5000)
        throw ConfigError("finite-difference checks are limited to models under 5k parameters");
    Batch batch = make_batch(bundle, starts, model.cfg.m, model.cfg.h);
    auto loss_fn = [&](Tape& t) {
        Var y_den = denormalized_forward(t, model, batch, bundle.norm);
        return prediction_loss(t, y_den, batch.target_raw, LossKind::Mae, 1.0);
    };
    return finite_diff_check(model.params, loss_fn, n_probes, seed, step);
}

} // namespace stpformer
