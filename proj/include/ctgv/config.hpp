#pragma once

#include <cstdint>

namespace ctgv {

struct ModelConfig {
  int64_t f = 8;
  int64_t h = 16;
  int64_t w = 16;
  int64_t c = 3;
  int64_t c_model = 64;
  int64_t n_max = 4;
  int64_t n_blocks = 2;
  int64_t T = 1000;
  uint64_t seed = 0;
};

struct ScheduleConfig {
  double beta_start = 0.00085;
  double beta_end = 0.012;
  bool rescale_zero_terminal = true;
};

void validate(const ModelConfig& cfg);

}  // namespace ctgv
