#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctgv/schedule.hpp"
#include "ctgv/trainer.hpp"

namespace ctgv {

// Uniform DDIM grid ts[k] = T*(steps-k)/steps for k = 0..steps, so ts[0] = T,
// ts[steps] = 0, and consecutive entries differ by at least 1 whenever
// steps <= T.
std::vector<int64_t> sample_timesteps(int64_t T, int64_t steps);

// Mechanical deterministic loop: repeatedly queries the model at each grid
// timestep and applies ddim_step until t = 0.
Tensor ddim_sample(const VModel& model, const Tensor& z_init, int64_t steps,
                   const NoiseSchedule& sched);

struct SampleRequest {
  std::string caption;
  std::vector<Tensor> images;        // conditioning frames, each [h, w, c]
  std::vector<int64_t> mask_frames;  // one frame index per image
  int64_t steps = 50;
  double cfg_scale = 7.5;
  uint64_t seed = 0;
  // Attention maps are averaged over the last attn_steps sampling steps,
  // where the latent is least noisy. 0 disables capture entirely.
  int64_t attn_steps = 10;
};

struct SampleResult {
  Tensor video;  // [f, h, w, c]
  // One [f, h*w, n_max] map per block, averaged over the captured steps.
  // Empty when capture is disabled.
  std::vector<Tensor> mean_attn;
};

// Classifier-free guided sampling from seeded unit normal noise. At
// cfg_scale = 0 only the unconditional branch contributes, so the output is
// bit-identical to sampling with an empty caption. Attention maps always come
// from the conditional pass.
SampleResult sample_video(const TrainState& st, const SampleRequest& req);

}  // namespace ctgv
