#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ctgv/attention.hpp"
#include "ctgv/config.hpp"
#include "ctgv/ctgm.hpp"
#include "ctgv/data.hpp"
#include "ctgv/tensor.hpp"

namespace ctgv {

// Which text-conditioning path the blocks run: the full guidance module or a
// plain per-frame cross-attention (the ablation arm). Both share the same
// wq/wk/wv so a zero-initialized ctgm model and a vanilla model with the same
// seed start out equivalent.
enum class GuidanceVariant { ctgm, vanilla };

struct Mlp {
  Tensor w1, b1, w2, b2;
};

struct DenoiserBlock {
  AttentionWeights spatial;
  Mlp mlp;
  CtgmBlock ctgm;
  AttentionWeights temporal;
};

struct Denoiser {
  ModelConfig cfg;
  GuidanceVariant variant = GuidanceVariant::ctgm;
  Vocabulary vocab;
  Tensor input_w, input_b;
  Mlp time_mlp;
  Tensor frame_pe;  // fixed sinusoid [f, c_model], not a parameter
  std::vector<DenoiserBlock> blocks;
  Tensor output_w, output_b;

  // Every learned tensor exactly once, in checkpoint order. The vanilla
  // variant omits the unused refinement branches.
  std::vector<std::pair<std::string, Tensor*>> params();
};

Denoiser build_model(const ModelConfig& cfg,
                     GuidanceVariant variant = GuidanceVariant::ctgm);

// Mask and image indicator channels. images[i] conditions mask_frames[i];
// unmasked frames get M = 0 and I = 0.
std::pair<Tensor, Tensor> build_indicators(
    const std::vector<Tensor>& images, const std::vector<int64_t>& mask_frames,
    const ModelConfig& cfg);

// Channel-concatenates (Z_n, M, I) in that order. I is multiplied by M
// first, so content on unmasked frames can never leak into the input.
Tensor make_input(const Tensor& z_n, const Tensor& m, const Tensor& i);

struct ForwardResult {
  Tensor v_pred;
  std::vector<AttentionTrace> traces;
};

ForwardResult forward(const Denoiser& model, const Tensor& input,
                      const Tensor& t_rep, int64_t t, bool capture = false);

}  // namespace ctgv
