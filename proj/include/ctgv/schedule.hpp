#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <utility>
#include <vector>

#include "ctgv/ops.hpp"
#include "ctgv/tensor.hpp"

namespace ctgv {

// Forward-process coefficients, index 0..T. alphabar[0] is always 1; with
// zero-terminal rescale alphabar[T] is exactly 0, so the last noisy state is
// pure noise and matches what the sampler starts from.
struct NoiseSchedule {
  int64_t T = 0;
  std::vector<double> alphabar;
  std::vector<double> sqrt_alphabar;
  std::vector<double> sqrt_one_minus;
};

// Linear betas over [beta_start, beta_end]. The rescale is the affine map on
// signal scales s_t = sqrt(alphabar_t) that keeps s_1 fixed and forces
// s_T = 0; it applies to t in [1, T] (t = 0 is the clean state by
// definition and stays at 1).
NoiseSchedule make_schedule(int64_t T, double beta_start, double beta_end,
                            bool rescale_zero_terminal);

// z_t = sqrt(abar_t) z + sqrt(1 - abar_t) eps
Tensor forward_diffuse(const Tensor& z, int64_t t, const Tensor& eps,
                       const NoiseSchedule& sched);

// v = sqrt(abar_t) eps - sqrt(1 - abar_t) z
Tensor v_target(const Tensor& z, const Tensor& eps, int64_t t,
                const NoiseSchedule& sched);

// Inverts the (z, eps) -> (z_t, v) rotation: returns (z0_pred, eps_pred).
std::pair<Tensor, Tensor> from_v(const Tensor& z_t, const Tensor& v, int64_t t,
                                 const NoiseSchedule& sched);

// Deterministic (eta = 0) update from t to t_prev < t.
Tensor ddim_step(const Tensor& z_t, const Tensor& v_pred, int64_t t,
                 int64_t t_prev, const NoiseSchedule& sched);

// v_uncond + scale * (v_cond - v_uncond)
Tensor cfg_combine(const Tensor& v_uncond, const Tensor& v_cond, double scale);

using VModel = std::function<Tensor(const Tensor& z_t, int64_t t)>;

// Mean squared error between the model's prediction at the diffused input and
// the v target. Conditioning is bound inside the callable.
Tensor training_loss(const VModel& model, const Tensor& z, int64_t t,
                     const Tensor& eps, const NoiseSchedule& sched);

// Audit dump, one `t,alphabar` row per timestep.
void dump_schedule_csv(const NoiseSchedule& sched, std::ostream& os);

}  // namespace ctgv
