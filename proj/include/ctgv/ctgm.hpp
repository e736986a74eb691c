#pragma once

#include "ctgv/attention.hpp"

namespace ctgv {

// Cross-frame guidance block. The vanilla path (wq, wk, wv) is plain
// per-frame cross-attention from latent pixels onto caption tokens; the
// three inserted branches inject temporal structure:
//   tii: temporal self-attention over Z, then text tokens attend the result
//   tar: temporal self-attention over the affinity map itself (channels are
//        the n_max token scores)
//   tfb: temporal self-attention over the attended output
// With all branches zero_out-initialized the block computes exactly the
// vanilla cross-attention.
struct CtgmBlock {
  AttentionWeights tii_self;   // over Z, channels c
  AttentionWeights tii_cross;  // text queries over Z_t, channels c
  AttentionWeights tar_self;   // over A, channels n_max
  AttentionWeights tfb_self;   // over Z_ref, channels c
  Tensor wq, wk, wv;           // [c, c], the cross-attention projections
  int64_t n_max = 0;
  // Sub-attentions carry a residual; kept as a knob because the source
  // formulas only write the final residual explicitly.
  bool inner_residual = true;
};

// branch_mode covers the four inserted branches; the vanilla projections
// are always random. Weight values depend only on (key, dims).
CtgmBlock make_ctgm_block(int64_t c, int64_t n_max, InitMode branch_mode,
                          uint64_t key);

// Detached copies of the per-block attention maps, all [f, hw, n] (with any
// leading batch dims preserved).
struct AttentionTrace {
  int block_id = 0;
  Tensor a;           // affinity, already scaled by 1/sqrt(c)
  Tensor a_ref;       // after temporal refinement
  Tensor attn_probs;  // softmax(a_ref), rows sum to 1
};

// Z: [..., f, hw, c], T_rep: [..., f, n_max, c] (one caption embedding
// repeated per frame). Returns (Z_t, T_z).
std::pair<Tensor, Tensor> tii(const Tensor& z, const Tensor& t_rep,
                              const CtgmBlock& blk);

// A[fr, p, tok] = <Wq Z_t[fr, p], Wk T_z[fr, tok]> / sqrt(c).
Tensor affinity(const Tensor& z_t, const Tensor& t_z, const CtgmBlock& blk);

// Temporal self-attention across frames on the affinity map, residual, so
// zero_out init returns A unchanged.
Tensor tar(const Tensor& a, const CtgmBlock& blk);

// Temporal self-attention plus the explicit residual.
Tensor tfb(const Tensor& z_ref, const CtgmBlock& blk);

Tensor ctgm_forward(const Tensor& z, const Tensor& t_rep, const CtgmBlock& blk,
                    AttentionTrace* trace = nullptr);

// The reduction target: softmax((Wq Z)(Wk T_rep)ᵀ/sqrt(c)) (Wv T_rep),
// also the cross-attention used by the no-refinement model variant.
Tensor vanilla_cross_attention(const Tensor& z, const Tensor& t_rep,
                               const CtgmBlock& blk,
                               AttentionTrace* trace = nullptr);

}  // namespace ctgv
