#pragma once

#include <cstddef>
#include <string>
#include <utility>

#include "stpformer/autograd.hpp"
#include "stpformer/rng.hpp"
#include "stpformer/tensor.hpp"

namespace stpformer {

// (B,S,Di) x (Di,Do) applied row-wise, optionally with a bias row
Var linear3(Tape& t, Var x, DualTensor& w);
Var linear3(Tape& t, Var x, DualTensor& w, DualTensor& bias);

struct LstmParams {
    DualTensor* w_ih = nullptr; // (d_in, 4H), gate order [input, forget, cell, output]
    DualTensor* w_hh = nullptr; // (H, 4H)
    DualTensor* bias = nullptr; // (4H), forget slice starts at 1
};

struct MhaParams {
    DualTensor* w_q = nullptr;
    DualTensor* w_k = nullptr;
    DualTensor* w_v = nullptr;
    DualTensor* w_o = nullptr; // all (D,D)
};

// Sequence aggregator over the flattened m*N token stream: a recurrent pass
// and a multi-head self-attention pass added together, then gated per token
// by a feature-axis softmax.
struct SsaParams {
    LstmParams lstm;
    MhaParams attn;
    DualTensor* w_g = nullptr; // (D,D); gate = softmax(H W_g^T)
};

// Temporal aggregator: node-mean pool, learned positional table, FFN, an
// optional graph-matching refinement, projection, broadcast back over nodes.
struct TpaParams {
    DualTensor* pos_emb = nullptr; // (m, D)
    DualTensor* ffn_w1 = nullptr;  // (D, D)
    DualTensor* ffn_b1 = nullptr;
    DualTensor* ffn_w2 = nullptr;  // (D, D)
    DualTensor* ffn_b2 = nullptr;
    DualTensor* out_proj = nullptr; // (D, D)
};

struct AttnProj {
    DualTensor* w_q = nullptr;
    DualTensor* w_k = nullptr;
    DualTensor* w_v = nullptr; // (D,D) each, single head
};

// Four-stage matching between a spatially projected and a temporally
// projected view of the pooled sequence.
struct StgmParams {
    DualTensor* w_t = nullptr; // (D, D)
    DualTensor* w_s = nullptr; // (D, D)
    DualTensor* w_h = nullptr; // (2D, D), fuses the concatenated stage-1 pair
    AttnProj alpha;            // queries from S_pos, keys/values from T_pos
    AttnProj beta;             // queries from T_pos, keys/values from S_sgm
};

SsaParams make_ssa_params(ParameterStore& store, const std::string& prefix,
                          std::size_t width, Rng& rng);
TpaParams make_tpa_params(ParameterStore& store, const std::string& prefix,
                          std::size_t m, std::size_t width, Rng& rng);
StgmParams make_stgm_params(ParameterStore& store, const std::string& prefix,
                            std::size_t width, Rng& rng);

// One plain recurrent step; mirrors the fused scan bit for bit.
std::pair<Tensor, Tensor> lstm_cell_step(const Tensor& x, const Tensor& h, const Tensor& c,
                                         const LstmParams& p);

// q_in (B,Sq,D) attends over kv_in (B,Sk,D); returns (B,Sq,D), no out-proj
Var single_head_attention(Tape& t, Var q_in, Var kv_in, const AttnProj& p, bool scaled);

Var multi_head_self_attention(Tape& t, Var x, const MhaParams& p, std::size_t heads);

struct SsaTrace {
    Var h;    // recurrent + attention sum, (B, m*N, D)
    Var gate; // feature-axis softmax, same shape
    Var out;  // (B, m, N, D)
};

// chunk_frames > 0 limits self-attention to blocks of that many frames
// (tokens never attend across a block edge); 0 means full attention.
SsaTrace ssa_forward_traced(Tape& t, Var x, const SsaParams& p, std::size_t heads,
                            std::size_t chunk_frames);
Var ssa_forward(Tape& t, Var x, const SsaParams& p, std::size_t heads = 4,
                std::size_t chunk_frames = 0);

struct StgmTrace {
    Var s_sgm;
    Var t_sgm;
    Var out;
};

// stages = 2 stops after the residual stage and returns T_sgm; stages = 4
// adds the two unscaled, projection-free enhancement stages.
StgmTrace stgm_forward_traced(Tape& t, Var x_pos, const StgmParams& p, int stages);
Var stgm_forward(Tape& t, Var x_pos, const StgmParams& p, int stages = 4);

// x (B,m,N,D) -> (B,m,N,D), constant along the node axis. use_tpa = false
// yields an all-zero constant (the "without TPA" ablation).
Var tpa_forward(Tape& t, Var x, const TpaParams& p, const StgmParams* stgm,
                bool use_tpa, bool use_stgm, int stgm_stages);

} // namespace stpformer
