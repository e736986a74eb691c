#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ctgv/data.hpp"
#include "ctgv/sampler.hpp"
#include "ctgv/tensor.hpp"

namespace ctgv {

// Where one token's attention mass sits per frame, and how far it travels.
struct DriftReport {
  std::vector<std::array<double, 2>> centroids;  // per frame (x, y), pixels
  std::vector<double> entropy;                   // per frame, nats
  double total_drift = 0.0;  // sum of consecutive centroid distances
};

// attn: [f, h*w, n]. The column is normalized per frame into a spatial
// distribution over pixels; pixel p sits at (x, y) = (p % w, p / w).
// A frame whose column sums to zero cannot be normalized and is an error.
DriftReport centroid_drift(const Tensor& attn, int64_t token_index, int64_t h,
                           int64_t w);

// Mean absolute inter-frame difference of an [f, h, w, c] video, f >= 2.
double motion_energy(const Tensor& video);

// Affine map to [0, 255] with nearest rounding. Monotone, so the byte
// ordering never contradicts the input ordering; a constant input maps to 0.
std::vector<uint8_t> quantize_minmax(const std::vector<double>& values);

void write_pgm(const std::string& path, const std::vector<uint8_t>& gray,
               int64_t h, int64_t w);
void write_ppm(const std::string& path, const std::vector<uint8_t>& rgb,
               int64_t h, int64_t w);

// One image per frame: <stem>_frame<k>.ppm for c = 3, .pgm for c = 1, other
// channel counts are skipped. Values are clamped to [-1, 1] and mapped
// linearly so a static video renders identically in every frame.
void write_video_frames(const std::string& dir, const std::string& stem,
                        const Tensor& video);

// Attention map export: header line "f hw n", then one CSV row per
// (frame, pixel) pair. Full precision, so the round-trip is bit-exact.
void write_trace_csv(const std::string& path, const Tensor& attn);
Tensor read_trace_csv(const std::string& path);

// Per-frame heatmaps of one token column (<stem>_frame<k>.pgm, min-max
// normalized per frame) plus the raw map as <stem>.csv.
void dump_attention(const std::string& dir, const std::string& stem,
                    const Tensor& attn, int64_t token_index, int64_t h,
                    int64_t w);

// Index of the first verb token, which is also its column in the attention
// maps. Errors when the caption has no verb.
int64_t verb_position(const std::vector<int64_t>& ids, const Vocabulary& vocab);

struct AblateRow {
  std::string prompt;
  uint64_t seed = 0;
  double motion_ctgm = 0.0;
  double motion_vanilla = 0.0;
  double drift_ctgm = 0.0;
  double drift_vanilla = 0.0;
};

struct AblateReport {
  std::vector<AblateRow> rows;  // |prompts| x |seeds|, prompt-major
  double mean_motion_ctgm = 0.0;
  double mean_motion_vanilla = 0.0;
  double mean_drift_ctgm = 0.0;
  double mean_drift_vanilla = 0.0;
  double win_motion = 0.0;  // fraction of rows where ctgm is strictly higher
  double win_drift = 0.0;
};

// Head-to-head comparison of two checkpoints that must agree on everything
// except the guidance variant. Drift is the verb-column total_drift averaged
// over blocks; every prompt needs a verb token.
AblateReport ablate(const TrainState& ctgm_arm, const TrainState& vanilla_arm,
                    const std::vector<std::string>& prompts,
                    const std::vector<uint64_t>& seeds, int64_t steps,
                    double cfg_scale, int64_t attn_steps = 10);

// Data rows, then a mean row and a win-rate row.
std::string ablate_to_csv(const AblateReport& report);

}  // namespace ctgv
