#include "stpformer/pattern.hpp"

#include <cmath>

#include "stpformer/errors.hpp"
#include "stpformer/init.hpp"

namespace stpformer {

Var linear3(Tape& t, Var x, DualTensor& w) {
    // copy: pushing nodes can reallocate tape storage and void references
    Shape s = t.val(x).shape();
    if (s.size() != 3)
        throw DimensionError("linear3: expected (B,S,D), got " + shape_str(s));
    std::size_t dout = w.value.shape()[1];
    Var flat = t.reshape(x, {s[0] * s[1], s[2]});
    return t.reshape(t.matmul(flat, t.param(w)), {s[0], s[1], dout});
}

Var linear3(Tape& t, Var x, DualTensor& w, DualTensor& bias) {
    Shape s = t.val(x).shape();
    if (s.size() != 3)
        throw DimensionError("linear3: expected (B,S,D), got " + shape_str(s));
    std::size_t dout = w.value.shape()[1];
    Var flat = t.reshape(x, {s[0] * s[1], s[2]});
    Var y = t.add(t.matmul(flat, t.param(w)), t.reshape(t.param(bias), {1, dout}));
    return t.reshape(y, {s[0], s[1], dout});
}

SsaParams make_ssa_params(ParameterStore& store, const std::string& prefix,
                          std::size_t width, Rng& rng) {
    SsaParams p;
    p.lstm.w_ih = &store.add(prefix + ".lstm.w_ih", uniform_fan_in(rng, width, 4 * width));
    p.lstm.w_hh = &store.add(prefix + ".lstm.w_hh", uniform_fan_in(rng, width, 4 * width));
    Tensor bias({4 * width});
    for (std::size_t j = width; j < 2 * width; ++j) bias[j] = 1.0; // open forget gates
    p.lstm.bias = &store.add(prefix + ".lstm.bias", std::move(bias));
    p.attn.w_q = &store.add(prefix + ".attn.w_q", uniform_fan_in(rng, width, width));
    p.attn.w_k = &store.add(prefix + ".attn.w_k", uniform_fan_in(rng, width, width));
    p.attn.w_v = &store.add(prefix + ".attn.w_v", uniform_fan_in(rng, width, width));
    p.attn.w_o = &store.add(prefix + ".attn.w_o", uniform_fan_in(rng, width, width));
    p.w_g = &store.add(prefix + ".w_g", uniform_fan_in(rng, width, width));
    return p;
}

TpaParams make_tpa_params(ParameterStore& store, const std::string& prefix,
                          std::size_t m, std::size_t width, Rng& rng) {
    TpaParams p;
    p.pos_emb = &store.add(prefix + ".pos_emb", random_walk_rows(rng, m, width, 0.02));
    p.ffn_w1 = &store.add(prefix + ".ffn.w1", uniform_fan_in(rng, width, width));
    p.ffn_b1 = &store.add(prefix + ".ffn.b1", Tensor({width}));
    p.ffn_w2 = &store.add(prefix + ".ffn.w2", uniform_fan_in(rng, width, width));
    p.ffn_b2 = &store.add(prefix + ".ffn.b2", Tensor({width}));
    p.out_proj = &store.add(prefix + ".out_proj", uniform_fan_in(rng, width, width));
    return p;
}

StgmParams make_stgm_params(ParameterStore& store, const std::string& prefix,
                            std::size_t width, Rng& rng) {
    StgmParams p;
    p.w_t = &store.add(prefix + ".w_t", uniform_fan_in(rng, width, width));
    p.w_s = &store.add(prefix + ".w_s", uniform_fan_in(rng, width, width));
    p.w_h = &store.add(prefix + ".w_h", uniform_fan_in(rng, 2 * width, width));
    p.alpha.w_q = &store.add(prefix + ".alpha.w_q", uniform_fan_in(rng, width, width));
    p.alpha.w_k = &store.add(prefix + ".alpha.w_k", uniform_fan_in(rng, width, width));
    p.alpha.w_v = &store.add(prefix + ".alpha.w_v", uniform_fan_in(rng, width, width));
    p.beta.w_q = &store.add(prefix + ".beta.w_q", uniform_fan_in(rng, width, width));
    p.beta.w_k = &store.add(prefix + ".beta.w_k", uniform_fan_in(rng, width, width));
    p.beta.w_v = &store.add(prefix + ".beta.w_v", uniform_fan_in(rng, width, width));
    return p;
}

std::pair<Tensor, Tensor> lstm_cell_step(const Tensor& x, const Tensor& h, const Tensor& c,
                                         const LstmParams& p) {
    const Tensor& wi = p.w_ih->value;
    const Tensor& wh = p.w_hh->value;
    const Tensor& bv = p.bias->value;
    std::size_t din = wi.shape()[0], hidden = wh.shape()[0];
    if (x.size() != din || h.size() != hidden || c.size() != hidden)
        throw DimensionError("lstm_cell_step: state sizes do not match the weights");

    // same evaluation order as the fused scan: input projection, bias,
    // then the recurrent contribution accumulated row by row
    std::vector<double> a(4 * hidden, 0.0);
    for (std::size_t k = 0; k < din; ++k) {
        double xv = x[k];
        const double* row = wi.data() + k * 4 * hidden;
        for (std::size_t j = 0; j < 4 * hidden; ++j) a[j] += xv * row[j];
    }
    for (std::size_t j = 0; j < 4 * hidden; ++j) a[j] += bv[j];
    for (std::size_t k = 0; k < hidden; ++k) {
        double hv = h[k];
        const double* row = wh.data() + k * 4 * hidden;
        for (std::size_t j = 0; j < 4 * hidden; ++j) a[j] += hv * row[j];
    }

    Tensor h2({hidden}), c2({hidden});
    for (std::size_t j = 0; j < hidden; ++j) {
        double gi = 1.0 / (1.0 + std::exp(-a[j]));
        double gf = 1.0 / (1.0 + std::exp(-a[hidden + j]));
        double gc = std::tanh(a[2 * hidden + j]);
        double go = 1.0 / (1.0 + std::exp(-a[3 * hidden + j]));
        c2[j] = gf * c[j] + gi * gc;
        h2[j] = go * std::tanh(c2[j]);
    }
    return {std::move(h2), std::move(c2)};
}

Var single_head_attention(Tape& t, Var q_in, Var kv_in, const AttnProj& p, bool scaled) {
    Shape qs = t.val(q_in).shape();
    Shape ks = t.val(kv_in).shape();
    if (qs.size() != 3 || ks.size() != 3 || qs[2] != ks[2] || qs[0] != ks[0])
        throw DimensionError("attention operands " + shape_str(qs) + " and " + shape_str(ks) +
                             " must be (B,S,D) with shared B and D");
    Var q = linear3(t, q_in, *p.w_q);
    Var k = linear3(t, kv_in, *p.w_k);
    Var v = linear3(t, kv_in, *p.w_v);
    Var scores = t.matmul(q, t.transpose_last(k));
    if (scaled) scores = t.scale(scores, 1.0 / std::sqrt(static_cast<double>(qs[2])));
    return t.matmul(t.softmax_last(scores), v);
}

Var multi_head_self_attention(Tape& t, Var x, const MhaParams& p, std::size_t heads) {
    Shape s = t.val(x).shape();
    if (s.size() != 3)
        throw DimensionError("self-attention input must be (B,S,D), got " + shape_str(s));
    std::size_t b = s[0], n = s[1], d = s[2];
    if (heads == 0 || d % heads != 0)
        throw ConfigError("width " + std::to_string(d) + " not divisible into " +
                          std::to_string(heads) + " heads");
    std::size_t hd = d / heads;

    auto split = [&](DualTensor* w) {
        Var y = linear3(t, x, *w);
        return t.reshape(t.permute(t.reshape(y, {b, n, heads, hd}), {0, 2, 1, 3}),
                         {b * heads, n, hd});
    };
    Var q = split(p.w_q), k = split(p.w_k), v = split(p.w_v);
    Var scores = t.scale(t.matmul(q, t.transpose_last(k)),
                         1.0 / std::sqrt(static_cast<double>(hd)));
    Var ctx = t.matmul(t.softmax_last(scores), v);
    Var merged = t.reshape(t.permute(t.reshape(ctx, {b, heads, n, hd}), {0, 2, 1, 3}),
                           {b, n, d});
    return linear3(t, merged, *p.w_o);
}

namespace {

// contiguous token span [lo, hi) along axis 1 of (B,S,D)
Var time_slice(Tape& t, Var x, std::size_t lo, std::size_t hi) {
    Shape s = t.val(x).shape();
    std::vector<std::size_t> idx(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) idx[i - lo] = i;
    Var rows = t.lookup_rows(t.reshape(t.permute(x, {1, 0, 2}), {s[1], s[0] * s[2]}),
                             std::move(idx));
    return t.permute(t.reshape(rows, {hi - lo, s[0], s[2]}), {1, 0, 2});
}

} // namespace

SsaTrace ssa_forward_traced(Tape& t, Var x, const SsaParams& p, std::size_t heads,
                            std::size_t chunk_frames) {
    Shape s = t.val(x).shape();
    if (s.size() != 4)
        throw DimensionError("sequence aggregator input must be (B,m,N,D), got " +
                             shape_str(s));
    std::size_t b = s[0], m = s[1], n = s[2], d = s[3];
    Var seq = t.reshape(x, {b, m * n, d});

    Var rec = t.lstm_scan(seq, t.param(*p.lstm.w_ih), t.param(*p.lstm.w_hh),
                          t.param(*p.lstm.bias));
    Var att;
    if (chunk_frames == 0) {
        att = multi_head_self_attention(t, seq, p.attn, heads);
    } else {
        Var acc;
        for (std::size_t lo = 0; lo < m; lo += chunk_frames) {
            std::size_t hi = std::min(m, lo + chunk_frames);
            Var part = multi_head_self_attention(t, time_slice(t, seq, lo * n, hi * n),
                                                 p.attn, heads);
            Var swapped = t.permute(part, {0, 2, 1}); // (B,D,len) so concat works
            acc = lo == 0 ? swapped : t.concat_last(acc, swapped);
        }
        att = t.permute(acc, {0, 2, 1});
    }

    SsaTrace trace;
    trace.h = t.add(rec, att);
    trace.gate = t.softmax_last(
        t.reshape(t.matmul(t.reshape(trace.h, {b * m * n, d}),
                           t.transpose_last(t.param(*p.w_g))),
                  {b, m * n, d}));
    trace.out = t.reshape(t.mul(trace.gate, trace.h), {b, m, n, d});
    return trace;
}

Var ssa_forward(Tape& t, Var x, const SsaParams& p, std::size_t heads,
                std::size_t chunk_frames) {
    return ssa_forward_traced(t, x, p, heads, chunk_frames).out;
}

StgmTrace stgm_forward_traced(Tape& t, Var x_pos, const StgmParams& p, int stages) {
    if (stages != 2 && stages != 4)
        throw ConfigError("matching stages must be 2 or 4, got " + std::to_string(stages));
    Shape s = t.val(x_pos).shape();
    if (s.size() != 3)
        throw DimensionError("matching input must be (B,m,D), got " + shape_str(s));

    Var t_pos = linear3(t, x_pos, *p.w_t);
    Var s_pos = linear3(t, x_pos, *p.w_s);

    Var a_out = single_head_attention(t, s_pos, t_pos, p.alpha, /*scaled=*/true);
    Var s_sgm = linear3(t, t.concat_last(s_pos, a_out), *p.w_h);

    Var b_out = single_head_attention(t, t_pos, s_sgm, p.beta, /*scaled=*/true);
    Var t_sgm = t.add(b_out, t_pos);

    StgmTrace trace;
    trace.s_sgm = s_sgm;
    trace.t_sgm = t_sgm;
    if (stages == 2) {
        trace.out = t_sgm;
        return trace;
    }
    // the final two stages are unscaled and projection-free by design
    Var s_enh = t.matmul(t.softmax_last(t.matmul(s_sgm, t.transpose_last(t_sgm))), t_sgm);
    Var t_fused =
        t.add(t.matmul(t.softmax_last(t.matmul(t_sgm, t.transpose_last(s_enh))), s_enh),
              t_sgm);
    trace.out = t_fused;
    return trace;
}

Var stgm_forward(Tape& t, Var x_pos, const StgmParams& p, int stages) {
    return stgm_forward_traced(t, x_pos, p, stages).out;
}

Var tpa_forward(Tape& t, Var x, const TpaParams& p, const StgmParams* stgm,
                bool use_tpa, bool use_stgm, int stgm_stages) {
    Shape s = t.val(x).shape();
    if (s.size() != 4)
        throw DimensionError("temporal aggregator input must be (B,m,N,D), got " +
                             shape_str(s));
    std::size_t b = s[0], m = s[1], n = s[2], d = s[3];
    if (!use_tpa) return t.constant(Tensor({b, m, n, d}));
    if (use_stgm && stgm == nullptr)
        throw ConfigError("matching stage enabled without its parameters");
    if (p.pos_emb->value.shape() != Shape{m, d})
        throw DimensionError("positional table " + shape_str(p.pos_emb->value.shape()) +
                             " does not cover " + std::to_string(m) + " frames of width " +
                             std::to_string(d));

    Var pool = t.mean_axis(x, 2); // (B,m,D)
    Var x_pos = t.add(pool, t.reshape(t.param(*p.pos_emb), {1, m, d}));
    Var z = t.relu(linear3(t, x_pos, *p.ffn_w1, *p.ffn_b1));
    z = linear3(t, z, *p.ffn_w2, *p.ffn_b2);
    Var h = use_stgm ? stgm_forward(t, z, *stgm, stgm_stages) : z;
    Var proj = linear3(t, h, *p.out_proj);
    return t.broadcast_to(t.reshape(proj, {b, m, 1, d}), {b, m, n, d});
}

} // namespace stpformer
