#include "ctgv/sampler.hpp"

#include <algorithm>
#include <string>

#include "ctgv/ops.hpp"
#include "ctgv/rng.hpp"

namespace ctgv {

std::vector<int64_t> sample_timesteps(int64_t T, int64_t steps) {
  check(steps >= 1, "steps must be >= 1, got " + std::to_string(steps));
  check(steps <= T, "steps (" + std::to_string(steps) +
                        ") must be <= T (" + std::to_string(T) +
                        ") so the timestep grid stays strictly decreasing");
  std::vector<int64_t> ts(static_cast<size_t>(steps) + 1);
  for (int64_t k = 0; k <= steps; ++k) {
    ts[static_cast<size_t>(k)] = T * (steps - k) / steps;
  }
  return ts;
}

Tensor ddim_sample(const VModel& model, const Tensor& z_init, int64_t steps,
                   const NoiseSchedule& sched) {
  std::vector<int64_t> ts = sample_timesteps(sched.T, steps);
  Tensor z = z_init;
  for (int64_t k = 0; k < steps; ++k) {
    size_t i = static_cast<size_t>(k);
    Tensor v = model(z, ts[i]);
    z = ddim_step(z, v, ts[i], ts[i + 1], sched);
  }
  return z;
}

SampleResult sample_video(const TrainState& st, const SampleRequest& req) {
  const ModelConfig& mc = st.cfg.model;
  check(req.cfg_scale >= 0.0, "cfg_scale must be >= 0");
  check(req.attn_steps >= 0, "attn_steps must be >= 0");

  std::vector<int64_t> ids = tokenize(req.caption, st.model.vocab);
  Tensor t_cond = encode_caption(ids, st.model.vocab, mc.n_max, mc.f);
  Tensor t_null = encode_caption({}, st.model.vocab, mc.n_max, mc.f);
  auto [m, img] = build_indicators(req.images, req.mask_frames, mc);

  Rng rng(key_of({fnv1a("sample-noise"), req.seed}));
  Tensor z = randn({mc.f, mc.h, mc.w, mc.c}, rng);

  std::vector<int64_t> ts = sample_timesteps(st.sched.T, req.steps);
  int64_t captured = std::min(req.attn_steps, req.steps);
  int64_t first_capture = req.steps - captured;

  std::vector<std::vector<double>> attn_sum;
  Shape attn_shape;

  for (int64_t k = 0; k < req.steps; ++k) {
    size_t i = static_cast<size_t>(k);
    int64_t t = ts[i];
    Tensor input = make_input(z, m, img);
    bool cap = captured > 0 && k >= first_capture;

    Tensor v_u = forward(st.model, input, t_null, t).v_pred;
    Tensor v = v_u;
    if (req.cfg_scale != 0.0 || cap) {
      ForwardResult cond = forward(st.model, input, t_cond, t, cap);
      if (cap) {
        if (attn_sum.empty()) {
          attn_sum.resize(cond.traces.size());
          attn_shape = cond.traces.front().attn_probs.shape();
        }
        for (size_t b = 0; b < cond.traces.size(); ++b) {
          const std::vector<double>& src = cond.traces[b].attn_probs.values();
          std::vector<double>& dst = attn_sum[b];
          if (dst.empty()) dst.assign(src.size(), 0.0);
          for (size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
        }
      }
      if (req.cfg_scale != 0.0) {
        v = cfg_combine(v_u, cond.v_pred, req.cfg_scale);
      }
    }
    z = ddim_step(z, v, t, ts[i + 1], st.sched);
  }

  SampleResult out;
  out.video = z;
  out.mean_attn.reserve(attn_sum.size());
  for (std::vector<double>& s : attn_sum) {
    for (double& x : s) x /= static_cast<double>(captured);
    out.mean_attn.push_back(Tensor(attn_shape, std::move(s)));
  }
  return out;
}

}  // namespace ctgv
