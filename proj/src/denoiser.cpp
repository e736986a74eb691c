#include "ctgv/denoiser.hpp"

#include <cmath>

#include "ctgv/ops.hpp"
#include "ctgv/rng.hpp"

namespace ctgv {

namespace {

std::vector<double> sinusoid(double pos, int64_t dim) {
  std::vector<double> pe(static_cast<size_t>(dim), 0.0);
  int64_t half = dim / 2;
  for (int64_t i = 0; i < half; ++i) {
    double w = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                        static_cast<double>(half));
    pe[static_cast<size_t>(i)] = std::sin(pos * w);
    pe[static_cast<size_t>(half + i)] = std::cos(pos * w);
  }
  return pe;
}

uint64_t param_key(const ModelConfig& cfg, const std::string& name) {
  return mix64(cfg.seed, fnv1a(name.c_str()));
}

Tensor init_linear_w(const ModelConfig& cfg, const std::string& name,
                     int64_t fan_in, int64_t fan_out) {
  Rng rng(param_key(cfg, name));
  return randn({fan_in, fan_out}, rng,
               1.0 / std::sqrt(static_cast<double>(fan_in)))
      .requires_grad_();
}

Tensor init_zero(const Shape& shape) {
  return Tensor::zeros(shape).requires_grad_();
}

Mlp init_mlp(const ModelConfig& cfg, const std::string& name, int64_t width) {
  Mlp m;
  m.w1 = init_linear_w(cfg, name + ".w1", width, 2 * width);
  m.b1 = init_zero({2 * width});
  m.w2 = init_linear_w(cfg, name + ".w2", 2 * width, width);
  m.b2 = init_zero({width});
  return m;
}

Tensor mlp_forward(const Tensor& x, const Mlp& m) {
  return linear(silu(linear(x, m.w1, m.b1)), m.w2, m.b2);
}

void push_attention(std::vector<std::pair<std::string, Tensor*>>& out,
                    const std::string& name, AttentionWeights& w) {
  out.emplace_back(name + ".wq", &w.wq);
  out.emplace_back(name + ".wk", &w.wk);
  out.emplace_back(name + ".wv", &w.wv);
  out.emplace_back(name + ".wo", &w.wo);
}

void push_mlp(std::vector<std::pair<std::string, Tensor*>>& out,
              const std::string& name, Mlp& m) {
  out.emplace_back(name + ".w1", &m.w1);
  out.emplace_back(name + ".b1", &m.b1);
  out.emplace_back(name + ".w2", &m.w2);
  out.emplace_back(name + ".b2", &m.b2);
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> Denoiser::params() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("vocab.embedding", &vocab.embedding);
  out.emplace_back("input_proj.w", &input_w);
  out.emplace_back("input_proj.b", &input_b);
  push_mlp(out, "time", time_mlp);
  for (size_t b = 0; b < blocks.size(); ++b) {
    std::string prefix = "block" + std::to_string(b);
    push_attention(out, prefix + ".spatial", blocks[b].spatial);
    push_mlp(out, prefix + ".mlp", blocks[b].mlp);
    out.emplace_back(prefix + ".ctgm.wq", &blocks[b].ctgm.wq);
    out.emplace_back(prefix + ".ctgm.wk", &blocks[b].ctgm.wk);
    out.emplace_back(prefix + ".ctgm.wv", &blocks[b].ctgm.wv);
    if (variant == GuidanceVariant::ctgm) {
      push_attention(out, prefix + ".ctgm.tii_self", blocks[b].ctgm.tii_self);
      push_attention(out, prefix + ".ctgm.tii_cross",
                     blocks[b].ctgm.tii_cross);
      push_attention(out, prefix + ".ctgm.tar_self", blocks[b].ctgm.tar_self);
      push_attention(out, prefix + ".ctgm.tfb_self", blocks[b].ctgm.tfb_self);
    }
    push_attention(out, prefix + ".temporal", blocks[b].temporal);
  }
  out.emplace_back("output_proj.w", &output_w);
  out.emplace_back("output_proj.b", &output_b);
  return out;
}

Denoiser build_model(const ModelConfig& cfg, GuidanceVariant variant) {
  validate(cfg);
  Denoiser m;
  m.cfg = cfg;
  m.variant = variant;
  m.vocab = make_vocabulary(cfg.c_model, cfg.seed);

  int64_t c_in = 2 * cfg.c + 1;
  m.input_w = init_linear_w(cfg, "input_proj.w", c_in, cfg.c_model);
  m.input_b = init_zero({cfg.c_model});
  m.time_mlp = init_mlp(cfg, "time", cfg.c_model);

  std::vector<double> pe(static_cast<size_t>(cfg.f * cfg.c_model));
  for (int64_t fr = 0; fr < cfg.f; ++fr) {
    auto row = sinusoid(static_cast<double>(fr), cfg.c_model);
    std::copy(row.begin(), row.end(),
              pe.begin() + static_cast<int64_t>(fr * cfg.c_model));
  }
  m.frame_pe = Tensor({cfg.f, cfg.c_model}, std::move(pe));

  m.blocks.resize(static_cast<size_t>(cfg.n_blocks));
  for (int64_t b = 0; b < cfg.n_blocks; ++b) {
    std::string prefix = "block" + std::to_string(b);
    DenoiserBlock& blk = m.blocks[static_cast<size_t>(b)];
    blk.spatial = attention_weights(cfg.c_model, cfg.c_model,
                                    InitMode::random,
                                    param_key(cfg, prefix + ".spatial"));
    blk.mlp = init_mlp(cfg, prefix + ".mlp", cfg.c_model);
    blk.ctgm = make_ctgm_block(cfg.c_model, cfg.n_max, InitMode::zero_out,
                               param_key(cfg, prefix + ".ctgm"));
    blk.temporal = attention_weights(cfg.c_model, cfg.c_model,
                                     InitMode::zero_out,
                                     param_key(cfg, prefix + ".temporal"));
  }

  m.output_w = init_linear_w(cfg, "output_proj.w", cfg.c_model, cfg.c);
  m.output_b = init_zero({cfg.c});
  return m;
}

std::pair<Tensor, Tensor> build_indicators(
    const std::vector<Tensor>& images, const std::vector<int64_t>& mask_frames,
    const ModelConfig& cfg) {
  check(images.size() == mask_frames.size(),
        "need one conditioning image per masked frame: " +
            std::to_string(images.size()) + " images for " +
            std::to_string(mask_frames.size()) + " frames");
  std::vector<double> mv(static_cast<size_t>(cfg.f * cfg.h * cfg.w), 0.0);
  std::vector<double> iv(static_cast<size_t>(cfg.f * cfg.h * cfg.w * cfg.c),
                         0.0);
  std::vector<bool> used(static_cast<size_t>(cfg.f), false);
  int64_t per_frame = cfg.h * cfg.w * cfg.c;
  for (size_t k = 0; k < mask_frames.size(); ++k) {
    int64_t fr = mask_frames[k];
    check(fr >= 0 && fr < cfg.f,
          "masked frame " + std::to_string(fr) + " outside [0, " +
              std::to_string(cfg.f) + ")");
    check(!used[static_cast<size_t>(fr)],
          "frame " + std::to_string(fr) + " masked twice");
    used[static_cast<size_t>(fr)] = true;
    check(images[k].shape() == Shape{cfg.h, cfg.w, cfg.c},
          "conditioning image shape " + shape_str(images[k].shape()) +
              " does not match frame " + shape_str({cfg.h, cfg.w, cfg.c}));
    for (int64_t i = 0; i < cfg.h * cfg.w; ++i)
      mv[static_cast<size_t>(fr * cfg.h * cfg.w + i)] = 1.0;
    for (int64_t i = 0; i < per_frame; ++i)
      iv[static_cast<size_t>(fr * per_frame + i)] =
          images[k].values()[static_cast<size_t>(i)];
  }
  return {Tensor({cfg.f, cfg.h, cfg.w, 1}, std::move(mv)),
          Tensor({cfg.f, cfg.h, cfg.w, cfg.c}, std::move(iv))};
}

Tensor make_input(const Tensor& z_n, const Tensor& m, const Tensor& i) {
  check(z_n.rank() == 4, "latent must be [f, h, w, c]");
  int64_t f = z_n.dim(0), h = z_n.dim(1), w = z_n.dim(2), c = z_n.dim(3);
  check(m.shape() == Shape{f, h, w, 1},
        "mask shape " + shape_str(m.shape()) + " does not match latent");
  check(i.shape() == z_n.shape(),
        "image indicator shape " + shape_str(i.shape()) +
            " does not match latent");
  std::vector<double> masked(i.values());
  for (int64_t p = 0; p < f * h * w; ++p) {
    double mp = m.values()[static_cast<size_t>(p)];
    for (int64_t ch = 0; ch < c; ++ch)
      masked[static_cast<size_t>(p * c + ch)] *= mp;
  }
  return concat_last({z_n, m, Tensor(i.shape(), std::move(masked))});
}

ForwardResult forward(const Denoiser& model, const Tensor& input,
                      const Tensor& t_rep, int64_t t, bool capture) {
  const ModelConfig& cfg = model.cfg;
  int64_t c_in = 2 * cfg.c + 1;
  check(input.shape() == Shape{cfg.f, cfg.h, cfg.w, c_in},
        "denoiser input shape " + shape_str(input.shape()) + " != " +
            shape_str({cfg.f, cfg.h, cfg.w, c_in}));
  check(t_rep.shape() == Shape{cfg.f, cfg.n_max, cfg.c_model},
        "caption tensor shape " + shape_str(t_rep.shape()) +
            " != " + shape_str({cfg.f, cfg.n_max, cfg.c_model}));
  check(t >= 1 && t <= cfg.T,
        "timestep " + std::to_string(t) + " outside [1, " +
            std::to_string(cfg.T) + "]");

  int64_t hw = cfg.h * cfg.w;
  Tensor x = linear(reshape(input, {cfg.f, hw, c_in}), model.input_w,
                    model.input_b);

  Tensor temb = mlp_forward(
      Tensor({cfg.c_model}, sinusoid(static_cast<double>(t), cfg.c_model)),
      model.time_mlp);
  x = add(x, tile_axis(tile_axis(temb, 0, hw), 0, cfg.f));
  x = add(x, tile_axis(model.frame_pe, 1, hw));

  ForwardResult result;
  for (size_t b = 0; b < model.blocks.size(); ++b) {
    const DenoiserBlock& blk = model.blocks[b];
    x = projected_attention(x, x, blk.spatial, true);
    x = add(x, mlp_forward(x, blk.mlp));

    AttentionTrace trace;
    AttentionTrace* tp = capture ? &trace : nullptr;
    Tensor guided = model.variant == GuidanceVariant::ctgm
                        ? ctgm_forward(x, t_rep, blk.ctgm, tp)
                        : vanilla_cross_attention(x, t_rep, blk.ctgm, tp);
    x = add(x, guided);
    if (capture) {
      trace.block_id = static_cast<int>(b);
      result.traces.push_back(std::move(trace));
    }

    x = temporal_self_attention(x, blk.temporal, true);
  }

  Tensor out = linear(x, model.output_w, model.output_b);
  result.v_pred = reshape(out, {cfg.f, cfg.h, cfg.w, cfg.c});
  return result;
}

}  // namespace ctgv
