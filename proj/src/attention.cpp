#include "ctgv/attention.hpp"

#include <cmath>

#include "ctgv/rng.hpp"

namespace ctgv {

AttentionWeights attention_weights(int64_t d_model, int64_t d_attn,
                                   InitMode mode, uint64_t key) {
  AttentionWeights w;
  w.init_mode = mode;
  double in_std = 1.0 / std::sqrt(static_cast<double>(d_model));
  double out_std = 1.0 / std::sqrt(static_cast<double>(d_attn));
  Rng rq(mix64(key, 1)), rk(mix64(key, 2)), rv(mix64(key, 3)), ro(mix64(key, 4));
  w.wq = randn({d_model, d_attn}, rq, in_std).requires_grad_();
  w.wk = randn({d_model, d_attn}, rk, in_std).requires_grad_();
  w.wv = randn({d_model, d_attn}, rv, in_std).requires_grad_();
  w.wo = (mode == InitMode::zero_out ? Tensor::zeros({d_attn, d_model})
                                     : randn({d_attn, d_model}, ro, out_std))
             .requires_grad_();
  return w;
}

AttentionResult scaled_dot_attention(const Tensor& q, const Tensor& k,
                                     const Tensor& v) {
  check(q.rank() >= 2 && k.rank() >= 2 && v.rank() >= 2,
        "attention operands need rank >= 2");
  int64_t d = q.dim(q.rank() - 1);
  check(k.dim(k.rank() - 1) == d,
        "query dim " + std::to_string(d) + " != key dim " +
            std::to_string(k.dim(k.rank() - 1)));
  AttentionResult r;
  r.attn = softmax(scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d))),
                   q.rank() - 1);
  r.out = matmul(r.attn, v);
  return r;
}

Tensor projected_attention(const Tensor& q_in, const Tensor& kv_in,
                           const AttentionWeights& w, bool residual,
                           Tensor* attn_out) {
  Tensor q = linear(q_in, w.wq, Tensor());
  Tensor k = linear(kv_in, w.wk, Tensor());
  Tensor v = linear(kv_in, w.wv, Tensor());
  AttentionResult r = scaled_dot_attention(q, k, v);
  if (attn_out) *attn_out = r.attn.detach();
  Tensor proj = linear(r.out, w.wo, Tensor());
  return residual ? add(q_in, proj) : proj;
}

namespace {

std::vector<int> swap_last3_perm(int rank) {
  std::vector<int> perm(static_cast<size_t>(rank));
  for (int i = 0; i < rank; ++i) perm[static_cast<size_t>(i)] = i;
  std::swap(perm[static_cast<size_t>(rank - 3)], perm[static_cast<size_t>(rank - 2)]);
  return perm;
}

}  // namespace

Tensor temporal_self_attention(const Tensor& x, const AttentionWeights& w,
                               bool residual, Tensor* attn_out) {
  check(x.rank() >= 3, "temporal attention needs [..., f, s, c]");
  auto perm = swap_last3_perm(x.rank());
  Tensor xt = permute(x, perm);
  Tensor yt = projected_attention(xt, xt, w, residual, attn_out);
  return permute(yt, perm);
}

Tensor spatial_cross_attention(const Tensor& q_seq, const Tensor& kv_seq,
                               const AttentionWeights& w, bool residual,
                               Tensor* attn_out) {
  check(q_seq.rank() >= 3 && kv_seq.rank() >= 3,
        "cross attention needs [..., f, n, c]");
  check(q_seq.dim(q_seq.rank() - 3) == kv_seq.dim(kv_seq.rank() - 3),
        "frame count mismatch: " + std::to_string(q_seq.dim(q_seq.rank() - 3)) +
            " vs " + std::to_string(kv_seq.dim(kv_seq.rank() - 3)));
  return projected_attention(q_seq, kv_seq, w, residual, attn_out);
}

}  // namespace ctgv
