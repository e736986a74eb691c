#include "ctgv/schedule.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

namespace ctgv {

namespace {

void check_step(int64_t t, const NoiseSchedule& sched) {
  check(t >= 1 && t <= sched.T,
        "timestep " + std::to_string(t) + " outside [1, " +
            std::to_string(sched.T) + "]");
}

void check_pair(const Tensor& a, const Tensor& b, const char* what) {
  check(a.shape() == b.shape(), std::string(what) + " shape mismatch: " +
                                    shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
}

}  // namespace

NoiseSchedule make_schedule(int64_t T, double beta_start, double beta_end,
                            bool rescale_zero_terminal) {
  check(T >= 1, "schedule needs T >= 1");
  check(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0,
        "invalid beta range: need 0 < beta_start < beta_end < 1");

  NoiseSchedule s;
  s.T = T;
  s.alphabar.resize(static_cast<size_t>(T) + 1);
  s.alphabar[0] = 1.0;
  double prod = 1.0;
  for (int64_t t = 1; t <= T; ++t) {
    double frac = T == 1 ? 0.0
                         : static_cast<double>(t - 1) /
                               static_cast<double>(T - 1);
    double beta = beta_start + (beta_end - beta_start) * frac;
    prod *= 1.0 - beta;
    s.alphabar[static_cast<size_t>(t)] = prod;
  }

  s.sqrt_alphabar.resize(s.alphabar.size());
  for (size_t i = 0; i < s.alphabar.size(); ++i)
    s.sqrt_alphabar[i] = std::sqrt(s.alphabar[i]);

  if (rescale_zero_terminal) {
    check(T >= 2, "zero-terminal rescale needs T >= 2: the map fixing "
                  "sqrt(alphabar_1) cannot also zero sqrt(alphabar_T)");
    double s1 = s.sqrt_alphabar[1];
    double sT = s.sqrt_alphabar[static_cast<size_t>(T)];
    double gain = s1 / (s1 - sT);
    for (int64_t t = 2; t < T; ++t) {
      size_t i = static_cast<size_t>(t);
      s.sqrt_alphabar[i] = (s.sqrt_alphabar[i] - sT) * gain;
    }
    // Fixed points of the map, assigned directly so they hold bit-exactly.
    s.sqrt_alphabar[1] = s1;
    s.sqrt_alphabar[static_cast<size_t>(T)] = 0.0;
    for (int64_t t = 1; t <= T; ++t) {
      size_t i = static_cast<size_t>(t);
      s.alphabar[i] = s.sqrt_alphabar[i] * s.sqrt_alphabar[i];
    }
  }

  s.sqrt_one_minus.resize(s.alphabar.size());
  for (size_t i = 0; i < s.alphabar.size(); ++i)
    s.sqrt_one_minus[i] = std::sqrt(1.0 - s.alphabar[i]);
  return s;
}

Tensor forward_diffuse(const Tensor& z, int64_t t, const Tensor& eps,
                       const NoiseSchedule& sched) {
  check_step(t, sched);
  check_pair(z, eps, "forward_diffuse");
  size_t i = static_cast<size_t>(t);
  return add(scale(z, sched.sqrt_alphabar[i]),
             scale(eps, sched.sqrt_one_minus[i]));
}

Tensor v_target(const Tensor& z, const Tensor& eps, int64_t t,
                const NoiseSchedule& sched) {
  check_step(t, sched);
  check_pair(z, eps, "v_target");
  size_t i = static_cast<size_t>(t);
  return sub(scale(eps, sched.sqrt_alphabar[i]),
             scale(z, sched.sqrt_one_minus[i]));
}

std::pair<Tensor, Tensor> from_v(const Tensor& z_t, const Tensor& v, int64_t t,
                                 const NoiseSchedule& sched) {
  check_step(t, sched);
  check_pair(z_t, v, "from_v");
  size_t i = static_cast<size_t>(t);
  double sa = sched.sqrt_alphabar[i];
  double sb = sched.sqrt_one_minus[i];
  Tensor z0 = sub(scale(z_t, sa), scale(v, sb));
  Tensor eps = add(scale(z_t, sb), scale(v, sa));
  return {z0, eps};
}

Tensor ddim_step(const Tensor& z_t, const Tensor& v_pred, int64_t t,
                 int64_t t_prev, const NoiseSchedule& sched) {
  check(t_prev < t, "ddim step must move backward in time: t_prev " +
                        std::to_string(t_prev) + " >= t " + std::to_string(t));
  check(t_prev >= 0, "t_prev must be >= 0");
  auto [z0, eps] = from_v(z_t, v_pred, t, sched);
  size_t i = static_cast<size_t>(t_prev);
  return add(scale(z0, sched.sqrt_alphabar[i]),
             scale(eps, sched.sqrt_one_minus[i]));
}

Tensor cfg_combine(const Tensor& v_uncond, const Tensor& v_cond, double scale_) {
  check_pair(v_uncond, v_cond, "cfg_combine");
  return add(v_uncond, scale(sub(v_cond, v_uncond), scale_));
}

Tensor training_loss(const VModel& model, const Tensor& z, int64_t t,
                     const Tensor& eps, const NoiseSchedule& sched) {
  Tensor z_t = forward_diffuse(z, t, eps, sched);
  Tensor target = v_target(z, eps, t, sched);
  Tensor diff = sub(model(z_t, t), target);
  return mean(mul(diff, diff));
}

void dump_schedule_csv(const NoiseSchedule& sched, std::ostream& os) {
  os << "t,alphabar\n" << std::setprecision(17);
  for (size_t t = 0; t < sched.alphabar.size(); ++t)
    os << t << "," << sched.alphabar[t] << "\n";
}

}  // namespace ctgv
