#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "stpformer/autograd.hpp"
#include "stpformer/graph.hpp"
#include "stpformer/rng.hpp"

namespace stpformer {

// How the binary reachability masks enter attention: scaling the softmax
// output entrywise (mask applied after normalization, no renormalization),
// or the conventional additive -1e30 on the logits before softmax.
enum class MaskMode { Multiplicative, Additive };

struct HeadCounts {
    std::size_t spat = 2;
    std::size_t geo = 2;
    std::size_t temp = 4;
    std::size_t total() const { return spat + geo + temp; }
};

struct HeadParams {
    DualTensor* w_q = nullptr;
    DualTensor* w_k = nullptr;
    DualTensor* w_v = nullptr; // each (D, d0)
};

// One encoder block: hop-masked node attention (short- and long-range) per
// time step, unmasked attention over time per node, head concat + shared
// projection, then the usual residual/norm/FFN/residual/norm tail.
struct EncoderBlockParams {
    std::vector<HeadParams> geo, spat, temp;
    DualTensor* w_o = nullptr;
    DualTensor* ffn_w1 = nullptr; // (D, 4D)
    DualTensor* ffn_b1 = nullptr;
    DualTensor* ffn_w2 = nullptr; // (4D, D)
    DualTensor* ffn_b2 = nullptr;
    DualTensor* ln1_g = nullptr;
    DualTensor* ln1_b = nullptr;
    DualTensor* ln2_g = nullptr;
    DualTensor* ln2_b = nullptr;
};

EncoderBlockParams make_encoder_block_params(ParameterStore& store, const std::string& prefix,
                                             std::size_t width, const HeadCounts& heads,
                                             Rng& rng);

// x (batch, S, D) -> (batch, S, d0); mask is (S,S) or null for unmasked
Var attention_head_batched(Tape& t, Var x, const Tensor* mask, const HeadParams& p,
                           MaskMode mode);

// single time-step convenience form over (N, D)
Var masked_attention_head(Tape& t, Var x_t, const Tensor* mask, const HeadParams& p,
                          MaskMode mode = MaskMode::Multiplicative);

// x (B,m,N,D) -> (B,m,N,D); masks may be null only when no masked heads exist
Var encoder_block_forward(Tape& t, Var x, const AttentionMasks* masks,
                          const EncoderBlockParams& p, MaskMode mode);

} // namespace stpformer
