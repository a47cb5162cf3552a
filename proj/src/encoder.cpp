#include "stpformer/encoder.hpp"

#include <cmath>

#include "stpformer/errors.hpp"
#include "stpformer/init.hpp"
#include "stpformer/pattern.hpp"

namespace stpformer {

namespace {

HeadParams make_head(ParameterStore& store, const std::string& prefix, std::size_t width,
                     std::size_t d0, Rng& rng) {
    HeadParams h;
    h.w_q = &store.add(prefix + ".w_q", uniform_fan_in(rng, width, d0));
    h.w_k = &store.add(prefix + ".w_k", uniform_fan_in(rng, width, d0));
    h.w_v = &store.add(prefix + ".w_v", uniform_fan_in(rng, width, d0));
    return h;
}

} // namespace

EncoderBlockParams make_encoder_block_params(ParameterStore& store, const std::string& prefix,
                                             std::size_t width, const HeadCounts& heads,
                                             Rng& rng) {
    if (heads.total() == 0) throw ConfigError("encoder block needs at least one head");
    if (width % heads.total() != 0)
        throw ConfigError("width " + std::to_string(width) + " not divisible by " +
                          std::to_string(heads.total()) + " heads");
    std::size_t d0 = width / heads.total();

    EncoderBlockParams p;
    for (std::size_t i = 0; i < heads.geo; ++i)
        p.geo.push_back(make_head(store, prefix + ".geo" + std::to_string(i), width, d0, rng));
    for (std::size_t i = 0; i < heads.spat; ++i)
        p.spat.push_back(make_head(store, prefix + ".spat" + std::to_string(i), width, d0, rng));
    for (std::size_t i = 0; i < heads.temp; ++i)
        p.temp.push_back(make_head(store, prefix + ".temp" + std::to_string(i), width, d0, rng));
    p.w_o = &store.add(prefix + ".w_o", uniform_fan_in(rng, width, width));
    p.ffn_w1 = &store.add(prefix + ".ffn.w1", uniform_fan_in(rng, width, 4 * width));
    p.ffn_b1 = &store.add(prefix + ".ffn.b1", Tensor({4 * width}));
    p.ffn_w2 = &store.add(prefix + ".ffn.w2", uniform_fan_in(rng, 4 * width, width));
    p.ffn_b2 = &store.add(prefix + ".ffn.b2", Tensor({width}));
    p.ln1_g = &store.add(prefix + ".ln1.g", Tensor::ones({width}));
    p.ln1_b = &store.add(prefix + ".ln1.b", Tensor({width}));
    p.ln2_g = &store.add(prefix + ".ln2.g", Tensor::ones({width}));
    p.ln2_b = &store.add(prefix + ".ln2.b", Tensor({width}));
    return p;
}

Var attention_head_batched(Tape& t, Var x, const Tensor* mask, const HeadParams& p,
                           MaskMode mode) {
    Shape s = t.val(x).shape();
    if (s.size() != 3)
        throw DimensionError("attention head input must be (batch, S, D), got " +
                             shape_str(s));
    std::size_t seq = s[1];
    std::size_t d0 = p.w_q->value.shape()[1];
    if (mask != nullptr && mask->shape() != Shape{seq, seq})
        throw DimensionError("mask " + shape_str(mask->shape()) + " does not fit sequence of " +
                             std::to_string(seq));

    Var q = linear3(t, x, *p.w_q);
    Var k = linear3(t, x, *p.w_k);
    Var v = linear3(t, x, *p.w_v);
    Var scores = t.scale(t.matmul(q, t.transpose_last(k)),
                         1.0 / std::sqrt(static_cast<double>(d0)));

    if (mask != nullptr && mode == MaskMode::Additive) {
        Tensor shift({1, seq, seq});
        for (std::size_t i = 0; i < seq * seq; ++i)
            shift[i] = (*mask)[i] == 0.0 ? -1e30 : 0.0;
        scores = t.add(scores, t.constant(std::move(shift)));
    }
    Var attn = t.softmax_last(scores);
    if (mask != nullptr && mode == MaskMode::Multiplicative)
        attn = t.mul(attn, t.constant(ops::reshape(*mask, {1, seq, seq})));
    return t.matmul(attn, v);
}

Var masked_attention_head(Tape& t, Var x_t, const Tensor* mask, const HeadParams& p,
                          MaskMode mode) {
    Shape s = t.val(x_t).shape();
    if (s.size() != 2)
        throw DimensionError("single-step head input must be (N, D), got " + shape_str(s));
    std::size_t d0 = p.w_q->value.shape()[1];
    Var out = attention_head_batched(t, t.reshape(x_t, {1, s[0], s[1]}), mask, p, mode);
    return t.reshape(out, {s[0], d0});
}

Var encoder_block_forward(Tape& t, Var x, const AttentionMasks* masks,
                          const EncoderBlockParams& p, MaskMode mode) {
    Shape s = t.val(x).shape();
    if (s.size() != 4)
        throw DimensionError("encoder block input must be (B,m,N,D), got " + shape_str(s));
    std::size_t b = s[0], m = s[1], n = s[2], d = s[3];
    std::size_t n_heads = p.geo.size() + p.spat.size() + p.temp.size();
    if (n_heads == 0 || d % n_heads != 0)
        throw ConfigError("width " + std::to_string(d) + " not divisible by " +
                          std::to_string(n_heads) + " heads");
    std::size_t d0 = d / n_heads;
    if ((!p.geo.empty() || !p.spat.empty()) && masks == nullptr)
        throw ConfigError("masked heads present but no reachability masks supplied");

    Var x_nodes = t.reshape(x, {b * m, n, d});                       // attend over nodes
    Var x_time = t.reshape(t.permute(x, {0, 2, 1, 3}), {b * n, m, d}); // attend over time

    Var cat;
    bool first = true;
    auto append = [&](Var part) {
        cat = first ? part : t.concat_last(cat, part);
        first = false;
    };
    for (const HeadParams& h : p.geo)
        append(attention_head_batched(t, x_nodes, &masks->m_geo, h, mode));
    for (const HeadParams& h : p.spat)
        append(attention_head_batched(t, x_nodes, &masks->m_spat, h, mode));
    for (const HeadParams& h : p.temp) {
        Var part = attention_head_batched(t, x_time, nullptr, h, mode); // (B*N, m, d0)
        part = t.permute(t.reshape(part, {b, n, m, d0}), {0, 2, 1, 3});
        append(t.reshape(part, {b * m, n, d0}));
    }

    Var proj = linear3(t, cat, *p.w_o);
    Var res1 = t.add(t.reshape(proj, {b, m, n, d}), x);
    Var norm1 = t.layer_norm(res1, t.param(*p.ln1_g), t.param(*p.ln1_b));

    Var flat = t.reshape(norm1, {b * m * n, d});
    Var hid = t.relu(t.add(t.matmul(flat, t.param(*p.ffn_w1)),
                           t.reshape(t.param(*p.ffn_b1), {1, 4 * d})));
    Var ffn = t.add(t.matmul(hid, t.param(*p.ffn_w2)),
                    t.reshape(t.param(*p.ffn_b2), {1, d}));
    Var res2 = t.add(t.reshape(ffn, {b, m, n, d}), norm1);
    return t.layer_norm(res2, t.param(*p.ln2_g), t.param(*p.ln2_b));
}

} // namespace stpformer
