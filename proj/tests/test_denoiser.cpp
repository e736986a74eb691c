#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "ctgv/denoiser.hpp"
#include "ctgv/ops.hpp"
#include "ctgv/rng.hpp"
#include "test_util.hpp"

using namespace ctgv;
using testutil::maxdiff;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.f = 2;
  cfg.h = 4;
  cfg.w = 4;
  cfg.c = 2;
  cfg.c_model = 8;
  cfg.n_max = 4;
  cfg.n_blocks = 1;
  cfg.T = 4;
  cfg.seed = 5;
  return cfg;
}

// Closed-form parameter count from the architecture walk.
int64_t expected_params(const ModelConfig& cfg, GuidanceVariant variant) {
  int64_t d = cfg.c_model, n = cfg.n_max, c = cfg.c;
  int64_t mlp = 4 * d * d + 3 * d;
  int64_t block = 4 * d * d + mlp + 3 * d * d + 4 * d * d;
  if (variant == GuidanceVariant::ctgm) block += 12 * d * d + 4 * n * n;
  return 11 * d + ((2 * c + 1) * d + d) + mlp + cfg.n_blocks * block +
         (d * c + c);
}

Tensor rand_input(const ModelConfig& cfg, uint64_t seed) {
  Rng rng(seed);
  Tensor z_n = randn({cfg.f, cfg.h, cfg.w, cfg.c}, rng);
  Tensor img = randn({cfg.h, cfg.w, cfg.c}, rng);
  auto [m, i] = build_indicators({img}, {0}, cfg);
  return make_input(z_n, m, i);
}

}  // namespace

TEST_CASE("build_indicators marks exactly the masked frames") {
  ModelConfig cfg = tiny_cfg();
  Rng rng(50);
  Tensor img = randn({cfg.h, cfg.w, cfg.c}, rng);

  auto [m, i] = build_indicators({img}, {0}, cfg);
  CHECK(m.shape() == Shape{cfg.f, cfg.h, cfg.w, 1});
  CHECK(i.shape() == Shape{cfg.f, cfg.h, cfg.w, cfg.c});
  int64_t hw = cfg.h * cfg.w;
  for (int64_t p = 0; p < hw; ++p) {
    CHECK(m.values()[static_cast<size_t>(p)] == 1.0);
    CHECK(m.values()[static_cast<size_t>(hw + p)] == 0.0);
  }
  for (int64_t k = 0; k < hw * cfg.c; ++k) {
    CHECK(i.values()[static_cast<size_t>(k)] == img.values()[static_cast<size_t>(k)]);
    CHECK(i.values()[static_cast<size_t>(hw * cfg.c + k)] == 0.0);
  }

  auto [m0, i0] = build_indicators({}, {}, cfg);
  for (double v : m0.values()) CHECK(v == 0.0);
  for (double v : i0.values()) CHECK(v == 0.0);

  ModelConfig four = cfg;
  four.f = 6;
  std::vector<Tensor> imgs;
  for (uint64_t s = 0; s < 4; ++s)
    imgs.push_back(randn({cfg.h, cfg.w, cfg.c}, rng));
  auto [m4, i4] = build_indicators(imgs, {0, 1, 2, 3}, four);
  for (int64_t fr = 0; fr < 6; ++fr)
    CHECK(m4.values()[static_cast<size_t>(fr * hw)] == (fr < 4 ? 1.0 : 0.0));
  for (size_t k = 0; k < 4; ++k)
    for (int64_t p = 0; p < hw * cfg.c; ++p)
      CHECK(i4.values()[static_cast<size_t>(static_cast<int64_t>(k) * hw *
                                            cfg.c + p)] ==
            imgs[k].values()[static_cast<size_t>(p)]);

  CHECK_THROWS_AS(build_indicators({img}, {0, 1}, cfg), std::runtime_error);
  CHECK_THROWS_AS(build_indicators({img}, {5}, cfg), std::runtime_error);
  CHECK_THROWS_AS(build_indicators({img, img}, {0, 0}, cfg),
                  std::runtime_error);
  CHECK_THROWS_AS(
      build_indicators({randn({2, 2, 2}, rng)}, {0}, cfg),
      std::runtime_error);
}

TEST_CASE("make_input keeps the (Z_n, M, I) channel order and masks I") {
  ModelConfig cfg = tiny_cfg();
  Rng rng(51);
  Tensor z_n = randn({cfg.f, cfg.h, cfg.w, cfg.c}, rng);
  Tensor m({cfg.f, cfg.h, cfg.w, 1},
           std::vector<double>(static_cast<size_t>(cfg.f * cfg.h * cfg.w),
                               0.0));
  {
    std::vector<double> mv(m.values());
    for (int64_t p = 0; p < cfg.h * cfg.w; ++p) mv[static_cast<size_t>(p)] = 1.0;
    m = Tensor(m.shape(), std::move(mv));
  }
  Tensor junk = randn({cfg.f, cfg.h, cfg.w, cfg.c}, rng);

  Tensor x = make_input(z_n, m, junk);
  CHECK(x.shape() == Shape{cfg.f, cfg.h, cfg.w, 2 * cfg.c + 1});
  int64_t cin = 2 * cfg.c + 1;
  for (int64_t p = 0; p < cfg.f * cfg.h * cfg.w; ++p) {
    bool masked = p < cfg.h * cfg.w;
    for (int64_t ch = 0; ch < cfg.c; ++ch)
      CHECK(x.values()[static_cast<size_t>(p * cin + ch)] ==
            z_n.values()[static_cast<size_t>(p * cfg.c + ch)]);
    CHECK(x.values()[static_cast<size_t>(p * cin + cfg.c)] ==
          (masked ? 1.0 : 0.0));
    for (int64_t ch = 0; ch < cfg.c; ++ch)
      CHECK(x.values()[static_cast<size_t>(p * cin + cfg.c + 1 + ch)] ==
            (masked ? junk.values()[static_cast<size_t>(p * cfg.c + ch)]
                    : 0.0));
  }
}

TEST_CASE("build_model: deterministic, zero-out insertions, param census") {
  ModelConfig cfg = tiny_cfg();
  Denoiser a = build_model(cfg);
  Denoiser b = build_model(cfg);
  auto pa = a.params(), pb = b.params();
  CHECK(pa.size() == pb.size());
  std::set<std::string> names;
  int64_t total = 0;
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(pa[i].second->values() == pb[i].second->values());
    CHECK(pa[i].second->tracked());
    names.insert(pa[i].first);
    total += pa[i].second->numel();
  }
  CHECK(names.size() == pa.size());
  CHECK(total == expected_params(cfg, GuidanceVariant::ctgm));

  ModelConfig other = cfg;
  other.seed = 6;
  Denoiser c = build_model(other);
  CHECK(c.input_w.values() != a.input_w.values());

  for (const DenoiserBlock& blk : a.blocks) {
    for (double v : blk.temporal.wo.values()) CHECK(v == 0.0);
    for (const AttentionWeights* w :
         {&blk.ctgm.tii_self, &blk.ctgm.tii_cross, &blk.ctgm.tar_self,
          &blk.ctgm.tfb_self})
      for (double v : w->wo.values()) CHECK(v == 0.0);
  }

  Denoiser v = build_model(cfg, GuidanceVariant::vanilla);
  int64_t vtotal = 0;
  for (auto& [name, p] : v.params()) {
    CHECK(name.find(".tii_") == std::string::npos);
    CHECK(name.find(".tar_") == std::string::npos);
    CHECK(name.find(".tfb_") == std::string::npos);
    vtotal += p->numel();
  }
  CHECK(vtotal == expected_params(cfg, GuidanceVariant::vanilla));
}

TEST_CASE("forward: shape, determinism, traces") {
  ModelConfig cfg = tiny_cfg();
  cfg.n_blocks = 2;
  Denoiser model = build_model(cfg);
  Tensor x = rand_input(cfg, 60);
  Tensor t_rep = encode_caption({1, 4, 7}, model.vocab, cfg.n_max, cfg.f);

  ForwardResult r = forward(model, x, t_rep, 2, true);
  CHECK(r.v_pred.shape() == Shape{cfg.f, cfg.h, cfg.w, cfg.c});
  CHECK(r.traces.size() == 2);
  for (int i = 0; i < 2; ++i) {
    CHECK(r.traces[static_cast<size_t>(i)].block_id == i);
    CHECK(r.traces[static_cast<size_t>(i)].attn_probs.shape() ==
          Shape{cfg.f, cfg.h * cfg.w, cfg.n_max});
  }

  ForwardResult r2 = forward(model, x, t_rep, 2, false);
  CHECK(r2.v_pred.values() == r.v_pred.values());
  CHECK(r2.traces.empty());

  CHECK_THROWS_AS(forward(model, x, t_rep, 0, false), std::runtime_error);
  CHECK_THROWS_AS(forward(model, x, t_rep, cfg.T + 1, false),
                  std::runtime_error);
  CHECK_THROWS_AS(
      forward(model, x, encode_caption({1}, model.vocab, cfg.n_max + 1,
                                       cfg.f), 2, false),
      std::runtime_error);
  Rng rng(61);
  CHECK_THROWS_AS(
      forward(model, randn({cfg.f, cfg.h, cfg.w, cfg.c}, rng), t_rep, 2,
              false),
      std::runtime_error);
}

TEST_CASE("zero-initialized guidance model equals its vanilla twin") {
  ModelConfig cfg = tiny_cfg();
  cfg.n_blocks = 2;
  Denoiser full = build_model(cfg, GuidanceVariant::ctgm);
  Denoiser plain = build_model(cfg, GuidanceVariant::vanilla);
  for (uint64_t seed = 0; seed < 5; ++seed) {
    Tensor x = rand_input(cfg, mix64(62, seed));
    Tensor t_rep = encode_caption({2, 5, 8}, full.vocab, cfg.n_max, cfg.f);
    ForwardResult a = forward(full, x, t_rep, 3, true);
    ForwardResult b = forward(plain, x, t_rep, 3, true);
    CHECK(maxdiff(a.v_pred.values(), b.v_pred.values()) < 1e-10);
    CHECK(maxdiff(a.traces[0].attn_probs.values(),
                  b.traces[0].attn_probs.values()) < 1e-10);
  }
}

TEST_CASE("conditioning image reaches the output only through the mask") {
  ModelConfig cfg = tiny_cfg();
  Denoiser model = build_model(cfg);
  Rng rng(63);
  Tensor z_n = randn({cfg.f, cfg.h, cfg.w, cfg.c}, rng);
  Tensor t_rep = encode_caption({3, 4, 6}, model.vocab, cfg.n_max, cfg.f);
  Tensor img_a = randn({cfg.h, cfg.w, cfg.c}, rng);
  Tensor img_b = randn({cfg.h, cfg.w, cfg.c}, rng);

  auto [ma, ia] = build_indicators({img_a}, {0}, cfg);
  auto [mb, ib] = build_indicators({img_b}, {0}, cfg);
  Tensor va = forward(model, make_input(z_n, ma, ia), t_rep, 2).v_pred;
  Tensor vb = forward(model, make_input(z_n, mb, ib), t_rep, 2).v_pred;
  CHECK(maxdiff(va.values(), vb.values()) > 1e-8);

  auto [m0, i0] = build_indicators({}, {}, cfg);
  Tensor junk = randn({cfg.f, cfg.h, cfg.w, cfg.c}, rng);
  Tensor v0 = forward(model, make_input(z_n, m0, i0), t_rep, 2).v_pred;
  Tensor vj = forward(model, make_input(z_n, m0, junk), t_rep, 2).v_pred;
  CHECK(v0.values() == vj.values());
}

TEST_CASE("full-model gradient check on the tiny config") {
  ModelConfig cfg = tiny_cfg();
  Denoiser model = build_model(cfg);
  Tensor x = rand_input(cfg, 64);
  Rng rng(65);
  Tensor pick = randn({cfg.f, cfg.h, cfg.w, cfg.c}, rng);

  auto ps = model.params();
  std::vector<Tensor> leaves;
  for (auto& [name, p] : ps) leaves.push_back(*p);

  double err = grad_check(
      [&](const std::vector<Tensor>& in) {
        Denoiser work = model;
        auto wp = work.params();
        for (size_t i = 0; i < wp.size(); ++i) *wp[i].second = in[i];
        Tensor t_rep =
            encode_caption({1, 4, 7}, work.vocab, cfg.n_max, cfg.f);
        return sum(mul(forward(work, x, t_rep, 2).v_pred, pick));
      },
      leaves);
  CHECK(err < 1e-3);
}
