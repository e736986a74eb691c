#include "ctgv/ctgm.hpp"

#include <cmath>

#include "ctgv/rng.hpp"

namespace ctgv {

CtgmBlock make_ctgm_block(int64_t c, int64_t n_max, InitMode branch_mode,
                          uint64_t key) {
  CtgmBlock blk;
  blk.n_max = n_max;
  blk.tii_self = attention_weights(c, c, branch_mode, mix64(key, 11));
  blk.tii_cross = attention_weights(c, c, branch_mode, mix64(key, 12));
  blk.tar_self = attention_weights(n_max, n_max, branch_mode, mix64(key, 13));
  blk.tfb_self = attention_weights(c, c, branch_mode, mix64(key, 14));
  double std_c = 1.0 / std::sqrt(static_cast<double>(c));
  Rng rq(mix64(key, 1)), rk(mix64(key, 2)), rv(mix64(key, 3));
  blk.wq = randn({c, c}, rq, std_c).requires_grad_();
  blk.wk = randn({c, c}, rk, std_c).requires_grad_();
  blk.wv = randn({c, c}, rv, std_c).requires_grad_();
  return blk;
}

namespace {

void check_tokens(const Tensor& t_rep, const CtgmBlock& blk) {
  int64_t n = t_rep.dim(t_rep.rank() - 2);
  check(n == blk.n_max, "caption length " + std::to_string(n) +
                            " != block token length " +
                            std::to_string(blk.n_max));
}

}  // namespace

std::pair<Tensor, Tensor> tii(const Tensor& z, const Tensor& t_rep,
                              const CtgmBlock& blk) {
  check_tokens(t_rep, blk);
  Tensor z_t = temporal_self_attention(z, blk.tii_self, blk.inner_residual);
  Tensor t_z = spatial_cross_attention(t_rep, z_t, blk.tii_cross, blk.inner_residual);
  return {z_t, t_z};
}

Tensor affinity(const Tensor& z_t, const Tensor& t_z, const CtgmBlock& blk) {
  int64_t c = z_t.dim(z_t.rank() - 1);
  Tensor q = linear(z_t, blk.wq, Tensor());
  Tensor k = linear(t_z, blk.wk, Tensor());
  return scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(c)));
}

Tensor tar(const Tensor& a, const CtgmBlock& blk) {
  return temporal_self_attention(a, blk.tar_self, true);
}

Tensor tfb(const Tensor& z_ref, const CtgmBlock& blk) {
  return temporal_self_attention(z_ref, blk.tfb_self, true);
}

Tensor ctgm_forward(const Tensor& z, const Tensor& t_rep, const CtgmBlock& blk,
                    AttentionTrace* trace) {
  auto [z_t, t_z] = tii(z, t_rep, blk);
  Tensor a = affinity(z_t, t_z, blk);
  Tensor a_ref = tar(a, blk);
  Tensor probs = softmax(a_ref, a_ref.rank() - 1);
  Tensor v = linear(t_z, blk.wv, Tensor());
  Tensor z_ref = matmul(probs, v);
  if (trace) {
    trace->a = a.detach();
    trace->a_ref = a_ref.detach();
    trace->attn_probs = probs.detach();
  }
  return tfb(z_ref, blk);
}

Tensor vanilla_cross_attention(const Tensor& z, const Tensor& t_rep,
                               const CtgmBlock& blk, AttentionTrace* trace) {
  check_tokens(t_rep, blk);
  Tensor a = affinity(z, t_rep, blk);
  Tensor probs = softmax(a, a.rank() - 1);
  Tensor v = linear(t_rep, blk.wv, Tensor());
  if (trace) {
    trace->a = a.detach();
    trace->a_ref = a.detach();
    trace->attn_probs = probs.detach();
  }
  return matmul(probs, v);
}

}  // namespace ctgv
