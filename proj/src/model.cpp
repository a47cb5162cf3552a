#include "stpformer/model.hpp"

#include <string>
#include <utility>

#include "stpformer/errors.hpp"
#include "stpformer/init.hpp"

namespace stpformer {

void ModelConfig::validate(std::size_t n_nodes) const {
    if (m == 0 || h == 0) throw ConfigError("window lengths m and h must be positive");
    if (d_in == 0 || d_out == 0) throw ConfigError("feature widths must be positive");
    if (width == 0) throw ConfigError("model width must be positive");
    if (layers == 0) throw ConfigError("at least one encoder layer is required");
    if (k == 0) throw ConfigError("spectral basis size k must be positive");
    if (n_nodes == 0) throw ConfigError("graph has no nodes");
    if (k > n_nodes) throw ConfigError("spectral basis size k exceeds the node count");
    std::size_t total_heads = heads.total();
    if (total_heads == 0) throw ConfigError("encoder needs at least one attention head");
    if (width % total_heads != 0)
        throw ConfigError("model width must be divisible by the encoder head count");
    if (use_ssa) {
        if (ssa_heads == 0) throw ConfigError("ssa_heads must be positive");
        if (width % ssa_heads != 0)
            throw ConfigError("model width must be divisible by ssa_heads");
    }
    if (use_stgm && !use_tpa)
        throw ConfigError("the graph mixer refines the pooled temporal summary; "
                          "use_stgm requires use_tpa");
    if (stgm_stages != 2 && stgm_stages != 4)
        throw ConfigError("stgm_stages must be 2 or 4");
    if (d_spat == 0) throw ConfigError("d_spat must be at least 1");
    if (d_spat > d_geo) throw ConfigError("d_spat must not exceed d_geo");
}

Var attention_mixer_forward(Tape& t, Var x_emb, Var tpa_out, Var ssa_out,
                            const std::vector<EncoderBlockParams>& blocks,
                            const std::vector<MixLayer>& mix, const AttentionMasks* masks,
                            MaskMode mode) {
    if (blocks.empty()) throw ConfigError("attention mixer needs at least one encoder block");
    if (mix.size() != blocks.size())
        throw ConfigError("attention mixer needs one channel projection per encoder block");
    // copy: pushing nodes can reallocate tape storage and void references
    Shape xs = t.val(x_emb).shape();
    if (xs.size() != 4) throw DimensionError("mixer input must be (B, m, N, D)");
    std::size_t b = xs[0], m = xs[1], n = xs[2], d = xs[3];

    Var x_mix = t.add(t.add(x_emb, tpa_out), ssa_out);
    Var h = x_mix;
    Var acc;
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        h = encoder_block_forward(t, h, masks, blocks[l], mode);
        Var proj = linear3(t, t.reshape(h, Shape({b, m * n, d})), *mix[l].w, *mix[l].b);
        acc = (l == 0) ? proj : t.add(acc, proj);
    }
    Var sum = t.reshape(acc, Shape({b, m, n, d}));
    return t.permute(sum, {0, 3, 2, 1}); // (B, D, N, m)
}

Var output_head(Tape& t, Var s_mix, const OutputHeadParams& p) {
    Shape ss = t.val(s_mix).shape();
    if (ss.size() != 4) throw DimensionError("output head input must be (B, D, N, m)");
    std::size_t b = ss[0], d = ss[1], n = ss[2], m = ss[3];
    Shape cw = p.conv_w->value.shape();
    Shape tw = p.time_w->value.shape();
    if (cw.size() != 2 || cw[0] != d)
        throw DimensionError("output head channel kernel must be (D, d_out)");
    if (tw.size() != 2 || tw[0] != m)
        throw DimensionError("output head temporal kernel must be (m, h)");
    std::size_t d_out = cw[1];
    std::size_t horizon = tw[1];

    Var u = t.permute(s_mix, {0, 2, 3, 1}); // (B, N, m, D)
    u = linear3(t, t.reshape(u, Shape({b, n * m, d})), *p.conv_w, *p.conv_b);
    u = t.relu(u);
    u = t.permute(t.reshape(u, Shape({b, n, m, d_out})), {0, 1, 3, 2}); // (B, N, d_out, m)
    Var y = linear3(t, t.reshape(u, Shape({b, n * d_out, m})), *p.time_w, *p.time_b);
    y = t.reshape(y, Shape({b, n, d_out, horizon}));
    return t.permute(y, {0, 3, 1, 2}); // (B, h, N, d_out)
}

StpFormer::StpFormer(ModelConfig cfg_, TimestampMeta meta_, const RoadGraph& graph,
                     unsigned seed)
    : cfg(cfg_), meta(meta_) {
    meta.validate();
    cfg.validate(graph.n_nodes);
    n_nodes = graph.n_nodes;

    u_spe = topk_eigenvectors(normalized_laplacian(graph), cfg.k).u_spe;
    masks = hop_masks(graph, cfg.d_spat, cfg.d_geo);

    Rng rng(seed);
    emb = make_embedding_params(params, "embed", cfg.d_in, cfg.width, cfg.k,
                                meta.steps_per_day(), rng);
    ssa = make_ssa_params(params, "ssa", cfg.width, rng);
    tpa = make_tpa_params(params, "tpa", cfg.m, cfg.width, rng);
    stgm = make_stgm_params(params, "stgm", cfg.width, rng);
    blocks.reserve(cfg.layers);
    mix.reserve(cfg.layers);
    for (std::size_t l = 0; l < cfg.layers; ++l)
        blocks.push_back(
            make_encoder_block_params(params, "enc" + std::to_string(l), cfg.width, cfg.heads, rng));
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        std::string p = "mix" + std::to_string(l);
        MixLayer layer;
        layer.w = &params.add(p + ".w", uniform_fan_in(rng, cfg.width, cfg.width));
        layer.b = &params.add(p + ".b", Tensor::zeros(Shape({cfg.width})));
        mix.push_back(layer);
    }
    head.conv_w = &params.add("head.conv_w", uniform_fan_in(rng, cfg.width, cfg.d_out));
    head.conv_b = &params.add("head.conv_b", Tensor::zeros(Shape({cfg.d_out})));
    // Near-zero temporal map so the head starts out predicting the train mean.
    // At full scale, early training collapses output variance by pushing conv_b
    // negative, which shuts the relu everywhere and freezes upstream gradients.
    head.time_w = &params.add("head.time_w", ops::scale(uniform_fan_in(rng, cfg.m, cfg.h), 0.01));
    head.time_b = &params.add("head.time_b", Tensor::zeros(Shape({cfg.h})));
}

namespace {

Var check_stage(Tape& t, Var v, const char* stage) {
    if (!ops::all_finite(t.val(v)))
        throw NumericalError(std::string("non-finite values after ") + stage);
    return v;
}

} // namespace

Var StpFormer::forward(Tape& t, const Tensor& x, const std::vector<long>& t0) {
    Shape xs = x.shape();
    if (xs.size() != 4) throw DimensionError("model input must be (B, m, N, d_in)");
    if (xs[1] != cfg.m) throw DimensionError("input window length does not match m");
    if (xs[2] != n_nodes) throw DimensionError("input node count does not match the graph");
    if (xs[3] != cfg.d_in) throw DimensionError("input feature width does not match d_in");

    Var x_emb = check_stage(t, embed_window_batch(t, x, t0, meta, u_spe, emb), "embedding");
    Var tp = check_stage(t,
                         tpa_forward(t, x_emb, tpa, cfg.use_stgm ? &stgm : nullptr, cfg.use_tpa,
                                     cfg.use_stgm, cfg.stgm_stages),
                         "temporal aggregation");
    Var sp;
    if (cfg.use_ssa) {
        sp = check_stage(t, ssa_forward(t, x_emb, ssa, cfg.ssa_heads, cfg.ssa_chunk_frames),
                         "sequence attention");
    } else {
        sp = t.constant(Tensor::zeros(t.val(x_emb).shape()));
    }
    Var s_mix = check_stage(
        t, attention_mixer_forward(t, x_emb, tp, sp, blocks, mix, &masks, cfg.mask_mode),
        "attention mixer");
    return check_stage(t, output_head(t, s_mix, head), "output head");
}

Tensor StpFormer::predict(const Tensor& window, long t0) {
    Shape ws = window.shape();
    if (ws.size() != 3) throw DimensionError("predict expects a single (m, N, d_in) window");
    Tape t(false);
    Tensor batched = ops::reshape(window, Shape({1, ws[0], ws[1], ws[2]}));
    Var y = forward(t, batched, {t0});
    Tensor out = t.val(y);
    Shape os = out.shape();
    return ops::reshape(out, Shape({os[1], os[2], os[3]}));
}

} // namespace stpformer
