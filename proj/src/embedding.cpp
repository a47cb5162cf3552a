#include "stpformer/embedding.hpp"

#include <cmath>

#include "stpformer/errors.hpp"
#include "stpformer/init.hpp"

namespace stpformer {

void TimestampMeta::validate() const {
    if (interval_minutes <= 0 || 1440 % interval_minutes != 0)
        throw ConfigError("interval_minutes must be a positive divisor of 1440, got " +
                          std::to_string(interval_minutes));
    if (year < 1 || month < 1 || month > 12 || day < 1 || day > 31)
        throw ConfigError("start date out of range");
    if (hour < 0 || hour > 23 || minute < 0 || minute > 59)
        throw ConfigError("start time out of range");
    if ((hour * 60 + minute) % interval_minutes != 0)
        throw ConfigError("start time does not sit on the sampling grid");
}

long days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    long era = (y >= 0 ? y : y - 399) / 400;
    unsigned yoe = static_cast<unsigned>(y - era * 400);
    unsigned doy = static_cast<unsigned>((153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1);
    unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<long>(doe) - 719468;
}

std::pair<std::size_t, std::size_t> periodic_indices(const TimestampMeta& meta, long t) {
    if (t < 0) throw InputError("negative step index " + std::to_string(t));
    long spd = static_cast<long>(meta.steps_per_day());
    long offset = (meta.hour * 60 + meta.minute) / meta.interval_minutes;
    long abs_step = offset + t;
    long days = days_from_civil(meta.year, meta.month, meta.day) + abs_step / spd;
    long week_idx = ((days % 7) + 7 + 3) % 7; // epoch day 0 was a Thursday
    return {static_cast<std::size_t>(week_idx), static_cast<std::size_t>(abs_step % spd)};
}

Tensor sinusoidal_pe(std::size_t rows, std::size_t dim) {
    Tensor pe({rows, dim});
    for (std::size_t t = 0; t < rows; ++t)
        for (std::size_t i = 0; i < dim; ++i) {
            double expo = (i % 2 == 0) ? 2.0 * static_cast<double>(i) / static_cast<double>(dim)
                                       : 2.0 * static_cast<double>(i - 1) / static_cast<double>(dim);
            double angle = static_cast<double>(t) / std::pow(10000.0, expo);
            pe.at(t, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    return pe;
}

EmbeddingParams make_embedding_params(ParameterStore& store, const std::string& prefix,
                                      std::size_t d_in, std::size_t width, std::size_t k,
                                      std::size_t steps_per_day, Rng& rng) {
    EmbeddingParams p;
    p.w_data = &store.add(prefix + ".w_data", uniform_fan_in(rng, d_in, width));
    p.b_data = &store.add(prefix + ".b_data", Tensor({width}));
    p.w_spe = &store.add(prefix + ".w_spe", uniform_fan_in(rng, k, width));
    p.b_spe = &store.add(prefix + ".b_spe", Tensor({width}));
    p.table_week = &store.add(prefix + ".table_week", gaussian(rng, {7, width}, 0.02));
    p.table_day = &store.add(prefix + ".table_day", gaussian(rng, {steps_per_day, width}, 0.02));
    return p;
}

Var spectral_embed(Tape& t, const Tensor& u_spe, const EmbeddingParams& p) {
    std::size_t k = p.w_spe->value.shape()[0];
    std::size_t width = p.w_spe->value.shape()[1];
    if (u_spe.rank() != 2 || u_spe.shape()[1] != k)
        throw DimensionError("spectral basis " + shape_str(u_spe.shape()) +
                             " does not match projection [" + std::to_string(k) + "," +
                             std::to_string(width) + "]");
    Var proj = t.matmul(t.constant(u_spe), t.param(*p.w_spe));
    return t.add(proj, t.reshape(t.param(*p.b_spe), {1, width}));
}

Var integrate_embeddings(Tape& t, Var x_data, Var spe, Var week, Var day, Var tpe) {
    Shape xs = t.val(x_data).shape();
    if (xs.size() != 4)
        throw DimensionError("x_data must be (B,m,N,D), got " + shape_str(xs));
    std::size_t b = xs[0], m = xs[1], n = xs[2], width = xs[3];
    if (t.val(spe).shape() != Shape{n, width})
        throw DimensionError("spectral part " + shape_str(t.val(spe).shape()) +
                             " does not broadcast over " + shape_str(xs));
    if (t.val(week).shape() != Shape{b, m, width} || t.val(day).shape() != Shape{b, m, width})
        throw DimensionError("periodic parts must be (B,m,D)");
    if (t.val(tpe).shape() != Shape{m, width})
        throw DimensionError("positional part must be (m,D)");

    Var out = t.add(x_data, t.reshape(spe, {1, 1, n, width}));
    out = t.add(out, t.reshape(week, {b, m, 1, width}));
    out = t.add(out, t.reshape(day, {b, m, 1, width}));
    out = t.add(out, t.reshape(tpe, {1, m, 1, width}));
    return out;
}

Var embed_window_batch(Tape& t, const Tensor& x_raw, const std::vector<long>& t0,
                       const TimestampMeta& meta, const Tensor& u_spe,
                       const EmbeddingParams& p) {
    if (x_raw.rank() != 4)
        throw DimensionError("input window batch must be (B,m,N,d_in), got " +
                             shape_str(x_raw.shape()));
    std::size_t b = x_raw.shape()[0], m = x_raw.shape()[1];
    std::size_t n = x_raw.shape()[2], d_in = x_raw.shape()[3];
    std::size_t width = p.w_data->value.shape()[1];
    if (t0.size() != b)
        throw InputError("got " + std::to_string(t0.size()) + " window anchors for batch " +
                         std::to_string(b));
    if (p.w_data->value.shape()[0] != d_in)
        throw DimensionError("input has " + std::to_string(d_in) + " features, projection expects " +
                             std::to_string(p.w_data->value.shape()[0]));
    if (u_spe.shape()[0] != n)
        throw DimensionError("spectral basis covers " + std::to_string(u_spe.shape()[0]) +
                             " nodes, input has " + std::to_string(n));

    Var flat = t.reshape(t.constant(x_raw), {b * m * n, d_in});
    Var proj = t.matmul(flat, t.param(*p.w_data));
    proj = t.add(proj, t.reshape(t.param(*p.b_data), {1, width}));
    Var x_data = t.reshape(proj, {b, m, n, width});

    std::vector<std::size_t> widx(b * m), didx(b * m);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            auto [w, d] = periodic_indices(meta, t0[i] + static_cast<long>(j));
            widx[i * m + j] = w;
            didx[i * m + j] = d;
        }
    Var week = t.reshape(t.lookup_rows(t.param(*p.table_week), widx), {b, m, width});
    Var day = t.reshape(t.lookup_rows(t.param(*p.table_day), didx), {b, m, width});

    Var spe = spectral_embed(t, u_spe, p);
    Var tpe = t.constant(sinusoidal_pe(m, width));
    return integrate_embeddings(t, x_data, spe, week, day, tpe);
}

} // namespace stpformer
