#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ctgv/config.hpp"
#include "ctgv/denoiser.hpp"
#include "ctgv/schedule.hpp"
#include "json.hpp"

namespace ctgv {

struct TrainConfig {
  int64_t steps = 1000;
  int64_t batch_size = 8;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double caption_dropout_p = 0.1;
  uint64_t seed = 0;
  GuidanceVariant variant = GuidanceVariant::ctgm;
  ModelConfig model;
  ScheduleConfig sched;
};

void validate(const TrainConfig& cfg);

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct AdamState {
  std::vector<std::vector<double>> m, v;
};

// One update, bias correction at 1-based time t. Parameters with no grad
// recorded this step are treated as zero-gradient.
void adam_step(const std::vector<std::pair<std::string, Tensor*>>& params,
               AdamState& opt, const TrainConfig& cfg, int64_t t);

struct TrainState {
  TrainConfig cfg;
  NoiseSchedule sched;
  Denoiser model;
  AdamState opt;
  int64_t step = 0;
};

TrainState init_training(const TrainConfig& cfg);

// Runs one optimization step at st.step and advances the counter.
double train_step(TrainState& st);

// Full loop. loss_csv (if given) receives a `step,loss` log; progress lines
// go to the stream every `progress_every` steps.
void train(TrainState& st, std::string* loss_csv,
           std::ostream* progress = nullptr, int64_t progress_every = 100);

// Single file: one-line JSON manifest, '\n', then all tensors as
// little-endian f32 at the manifest's byte offsets (parameters, then adam.m,
// then adam.v).
void save_checkpoint(TrainState& st, const std::string& path);
TrainState load_checkpoint(const std::string& path);

}  // namespace ctgv
