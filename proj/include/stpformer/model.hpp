#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "stpformer/autograd.hpp"
#include "stpformer/embedding.hpp"
#include "stpformer/encoder.hpp"
#include "stpformer/graph.hpp"
#include "stpformer/pattern.hpp"

namespace stpformer {

struct ModelConfig {
    std::size_t m = 12;      // look-back steps
    std::size_t h = 12;      // forecast horizon
    std::size_t d_in = 1;
    std::size_t d_out = 1;
    std::size_t width = 32;  // shared feature width after embedding
    std::size_t layers = 2;  // encoder depth L
    std::size_t k = 8;       // spectral basis size
    std::size_t d_spat = 1;  // short-range hop radius
    std::size_t d_geo = 3;   // long-range hop radius
    HeadCounts heads;        // encoder head split
    std::size_t ssa_heads = 4;
    bool use_tpa = true;
    bool use_stgm = true;
    bool use_ssa = true;
    int stgm_stages = 4;
    MaskMode mask_mode = MaskMode::Multiplicative;
    std::size_t ssa_chunk_frames = 0; // 0 = attend across the full token stream

    // ConfigError on any violated constraint; n_nodes bounds k and the radii
    void validate(std::size_t n_nodes) const;
};

struct MixLayer {
    DualTensor* w = nullptr; // (D, D)
    DualTensor* b = nullptr; // (D)
};

struct OutputHeadParams {
    DualTensor* conv_w = nullptr; // (D, d_out)
    DualTensor* conv_b = nullptr;
    DualTensor* time_w = nullptr; // (m, h)
    DualTensor* time_b = nullptr;
};

// X_mix = x_emb + T + S, chained encoder blocks, per-layer channel
// projections, residual-summed. Output layout (B, D, N, m).
Var attention_mixer_forward(Tape& t, Var x_emb, Var tpa_out, Var ssa_out,
                            const std::vector<EncoderBlockParams>& blocks,
                            const std::vector<MixLayer>& mix, const AttentionMasks* masks,
                            MaskMode mode);

// relu(channel projection D -> d_out), then an affine map m -> h along the
// temporal axis; final layout (B, h, N, d_out)
Var output_head(Tape& t, Var s_mix, const OutputHeadParams& p);

// The full forecasting model. Parameter creation order (and therefore
// checkpoint layout) is fixed by the constructor.
class StpFormer {
public:
    StpFormer(ModelConfig cfg, TimestampMeta meta, const RoadGraph& graph, unsigned seed);

    // x (B, m, N, d_in); t0[b] = series index of window b's first frame.
    // Returns (B, h, N, d_out). Throws NumericalError naming the first stage
    // that produced a non-finite value.
    Var forward(Tape& t, const Tensor& x, const std::vector<long>& t0);

    // single-window convenience wrapper, no gradient bookkeeping
    Tensor predict(const Tensor& window, long t0);

    ModelConfig cfg;
    TimestampMeta meta;
    std::size_t n_nodes = 0;
    Tensor u_spe; // (N, k) spectral basis, fixed at construction
    AttentionMasks masks;
    ParameterStore params;

    EmbeddingParams emb;
    SsaParams ssa;
    TpaParams tpa;
    StgmParams stgm;
    std::vector<EncoderBlockParams> blocks;
    std::vector<MixLayer> mix;
    OutputHeadParams head;
};

} // namespace stpformer
