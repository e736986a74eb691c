#pragma once

#include "ctgv/rng.hpp"
#include "ctgv/tensor.hpp"

namespace ctgv {

// Differentiable ops. Every op is eager: it computes its output immediately
// and, when a tape is active and an input is tracked, records a backward
// closure. Summation order inside each op is fixed by the code, never by the
// thread count, so results are bit-identical for any set_threads value.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor silu(const Tensor& a);

// x: [..., d_in], w: [d_in, d_out], b: [d_out] or undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Batched matrix products. Leading dims of a and b must match exactly.
// a: [..., m, k], b: [..., k, n] -> [..., m, n].
Tensor matmul(const Tensor& a, const Tensor& b);
// a: [..., m, k], b: [..., n, k] -> [..., m, n], i.e. a times b transposed.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// Same data buffer, new shape. Bit-exact by construction.
Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<int>& perm);

// Softmax along `axis`, max-subtracted for stability.
Tensor softmax(const Tensor& a, int axis);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// table: [vocab, d], ids in [0, vocab) -> [ids.size(), d].
Tensor embed_rows(const Tensor& table, const std::vector<int64_t>& ids);

// Inserts a new axis of length m at position `axis`, repeating the input.
// [d0, .., d_{axis-1}, d_axis, ..] -> [d0, .., d_{axis-1}, m, d_axis, ..].
Tensor tile_axis(const Tensor& a, int axis, int64_t m);

// Untracked helpers for assembling constant inputs.
Tensor stack_leading(const std::vector<Tensor>& parts);
Tensor concat_last(const std::vector<Tensor>& parts);
// One slice along the first axis: [d0, d1, ..] -> [d1, ..].
Tensor take_leading(const Tensor& a, int64_t index);

Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);

// Max over all input elements of |analytic - numeric| / max(1, |numeric|),
// where numeric is a central difference with step eps and analytic comes
// from one taped backward pass. f must map the inputs to a scalar.
double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  const std::vector<Tensor>& inputs, double eps = 1e-5);

}  // namespace ctgv
