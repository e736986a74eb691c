#pragma once

#include "ctgv/ops.hpp"
#include "ctgv/tensor.hpp"

namespace ctgv {

enum class InitMode { random, zero_out };

// Single-head projection weights. d_attn is the shared query/key/value dim,
// Wo maps back to d_model. zero_out zeroes Wo only: the branch then adds
// nothing at init while its Q/K/V gradients stay alive.
struct AttentionWeights {
  Tensor wq, wk, wv, wo;
  InitMode init_mode = InitMode::random;
};

// Weights drawn N(0, 1/sqrt(d_in)) from streams derived off `key`, so the
// values depend only on (key, shape), never on construction order.
AttentionWeights attention_weights(int64_t d_model, int64_t d_attn,
                                   InitMode mode, uint64_t key);

struct AttentionResult {
  Tensor out;   // [..., s_q, d_v]
  Tensor attn;  // [..., s_q, s_k], rows sum to 1
};

// attn = softmax(Q Kᵀ / sqrt(d)) along s_k; out = attn V. Leading batch
// dims of the three operands must match exactly.
AttentionResult scaled_dot_attention(const Tensor& q, const Tensor& k,
                                     const Tensor& v);

// Full projected attention: queries from q_in, keys/values from kv_in,
// output projection Wo, optional residual from q_in. attn_out, when given,
// receives the detached attention map.
Tensor projected_attention(const Tensor& q_in, const Tensor& kv_in,
                           const AttentionWeights& w, bool residual,
                           Tensor* attn_out = nullptr);

// x: [..., f, s, c]. Attention runs along f independently per position s
// (the last three dims are swapped to (s, f, c) and back). No positional
// encoding: the op is permutation-equivariant along both f and s.
Tensor temporal_self_attention(const Tensor& x, const AttentionWeights& w,
                               bool residual, Tensor* attn_out = nullptr);

// q_seq: [..., f, n_q, c], kv_seq: [..., f, n_kv, c]. Per-frame attention
// of the query sequence over the key/value sequence.
Tensor spatial_cross_attention(const Tensor& q_seq, const Tensor& kv_seq,
                               const AttentionWeights& w, bool residual,
                               Tensor* attn_out = nullptr);

}  // namespace ctgv
