#include "ctgv/trainer.hpp"

#include <cmath>
#include <cstring>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "ctgv/io.hpp"
#include "ctgv/ops.hpp"
#include "ctgv/rng.hpp"

namespace ctgv {

namespace {

std::string variant_name(GuidanceVariant v) {
  return v == GuidanceVariant::ctgm ? "ctgm" : "vanilla";
}

GuidanceVariant variant_from(const std::string& s) {
  if (s == "ctgm") return GuidanceVariant::ctgm;
  if (s == "vanilla") return GuidanceVariant::vanilla;
  fail("unknown variant '" + s + "'");
}

void append_f32(std::string& blob, const std::vector<double>& vals) {
  for (double d : vals) {
    float f = static_cast<float>(d);
    char b[4];
    std::memcpy(b, &f, 4);
    blob.append(b, 4);
  }
}

std::vector<double> read_f32(const std::string& blob, size_t offset,
                             int64_t n, const std::string& what) {
  check(offset + static_cast<size_t>(n) * 4 <= blob.size(),
        "checkpoint blob truncated while reading " + what);
  std::vector<double> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    float f;
    std::memcpy(&f, blob.data() + offset + static_cast<size_t>(i) * 4, 4);
    out[static_cast<size_t>(i)] = static_cast<double>(f);
  }
  return out;
}

void ensure_opt_sized(AdamState& opt,
                      const std::vector<std::pair<std::string, Tensor*>>& ps) {
  if (opt.m.empty()) {
    opt.m.resize(ps.size());
    opt.v.resize(ps.size());
    for (size_t i = 0; i < ps.size(); ++i) {
      opt.m[i].assign(static_cast<size_t>(ps[i].second->numel()), 0.0);
      opt.v[i].assign(static_cast<size_t>(ps[i].second->numel()), 0.0);
    }
  }
  check(opt.m.size() == ps.size() && opt.v.size() == ps.size(),
        "optimizer state does not match the parameter list");
}

}  // namespace

void validate(const TrainConfig& cfg) {
  validate(cfg.model);
  check(cfg.steps >= 0, "steps must be >= 0");
  check(cfg.batch_size >= 1, "batch_size must be >= 1");
  check(cfg.learning_rate > 0.0, "learning_rate must be positive");
  check(cfg.caption_dropout_p >= 0.0 && cfg.caption_dropout_p < 1.0,
        "caption_dropout_p must lie in [0, 1)");
  check(cfg.adam_beta1 > 0.0 && cfg.adam_beta1 < 1.0 && cfg.adam_beta2 > 0.0 &&
            cfg.adam_beta2 < 1.0 && cfg.adam_eps > 0.0,
        "adam parameters out of range");
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["steps"] = cfg.steps;
  j["batch_size"] = cfg.batch_size;
  j["learning_rate"] = cfg.learning_rate;
  j["adam_beta1"] = cfg.adam_beta1;
  j["adam_beta2"] = cfg.adam_beta2;
  j["adam_eps"] = cfg.adam_eps;
  j["caption_dropout_p"] = cfg.caption_dropout_p;
  j["seed"] = cfg.seed;
  j["variant"] = variant_name(cfg.variant);
  j["model"] = {{"f", cfg.model.f},
                {"h", cfg.model.h},
                {"w", cfg.model.w},
                {"c", cfg.model.c},
                {"c_model", cfg.model.c_model},
                {"n_max", cfg.model.n_max},
                {"n_blocks", cfg.model.n_blocks},
                {"T", cfg.model.T},
                {"seed", cfg.model.seed}};
  j["schedule"] = {{"beta_start", cfg.sched.beta_start},
                   {"beta_end", cfg.sched.beta_end},
                   {"rescale_zero_terminal", cfg.sched.rescale_zero_terminal}};
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.steps = j.value("steps", cfg.steps);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.adam_beta1 = j.value("adam_beta1", cfg.adam_beta1);
  cfg.adam_beta2 = j.value("adam_beta2", cfg.adam_beta2);
  cfg.adam_eps = j.value("adam_eps", cfg.adam_eps);
  cfg.caption_dropout_p = j.value("caption_dropout_p", cfg.caption_dropout_p);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("variant"))
    cfg.variant = variant_from(j["variant"].get<std::string>());
  if (j.contains("model")) {
    const auto& m = j["model"];
    cfg.model.f = m.value("f", cfg.model.f);
    cfg.model.h = m.value("h", cfg.model.h);
    cfg.model.w = m.value("w", cfg.model.w);
    cfg.model.c = m.value("c", cfg.model.c);
    cfg.model.c_model = m.value("c_model", cfg.model.c_model);
    cfg.model.n_max = m.value("n_max", cfg.model.n_max);
    cfg.model.n_blocks = m.value("n_blocks", cfg.model.n_blocks);
    cfg.model.T = m.value("T", cfg.model.T);
    cfg.model.seed = m.value("seed", cfg.model.seed);
  }
  if (j.contains("schedule")) {
    const auto& s = j["schedule"];
    cfg.sched.beta_start = s.value("beta_start", cfg.sched.beta_start);
    cfg.sched.beta_end = s.value("beta_end", cfg.sched.beta_end);
    cfg.sched.rescale_zero_terminal =
        s.value("rescale_zero_terminal", cfg.sched.rescale_zero_terminal);
  }
  validate(cfg);
  return cfg;
}

void adam_step(const std::vector<std::pair<std::string, Tensor*>>& params,
               AdamState& opt, const TrainConfig& cfg, int64_t t) {
  check(t >= 1, "adam time index is 1-based");
  ensure_opt_sized(opt, params);
  double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor* p = params[i].second;
    const std::vector<double>& g = p->grad();
    size_t n = static_cast<size_t>(p->numel());
    check(opt.m[i].size() == n,
          "optimizer slot size mismatch for " + params[i].first);
    std::vector<double> nv(p->values());
    for (size_t k = 0; k < n; ++k) {
      double gk = g.empty() ? 0.0 : g[k];
      double& mk = opt.m[i][k];
      double& vk = opt.v[i][k];
      mk = cfg.adam_beta1 * mk + (1.0 - cfg.adam_beta1) * gk;
      vk = cfg.adam_beta2 * vk + (1.0 - cfg.adam_beta2) * gk * gk;
      nv[k] -= cfg.learning_rate * (mk / bc1) /
               (std::sqrt(vk / bc2) + cfg.adam_eps);
    }
    *p = Tensor(p->shape(), std::move(nv)).requires_grad_();
  }
}

TrainState init_training(const TrainConfig& cfg) {
  validate(cfg);
  TrainState st;
  st.cfg = cfg;
  st.sched = make_schedule(cfg.model.T, cfg.sched.beta_start,
                           cfg.sched.beta_end,
                           cfg.sched.rescale_zero_terminal);
  st.model = build_model(cfg.model, cfg.variant);
  auto ps = st.model.params();
  ensure_opt_sized(st.opt, ps);
  return st;
}

double train_step(TrainState& st) {
  const TrainConfig& cfg = st.cfg;
  uint64_t step_u = static_cast<uint64_t>(st.step);

  ComputeTape tape;
  Tensor total;
  {
    TapeScope scope(&tape);
    for (int64_t slot = 0; slot < cfg.batch_size; ++slot) {
      uint64_t slot_u = static_cast<uint64_t>(slot);
      VideoSample sample = generate_sample(
          key_of({fnv1a("train-sample"), cfg.seed, step_u, slot_u}),
          cfg.model);

      Rng tr(key_of({fnv1a("train-t"), cfg.seed, step_u, slot_u}));
      int64_t t = 1 + static_cast<int64_t>(
                          tr.below(static_cast<uint64_t>(cfg.model.T)));
      Rng er(key_of({fnv1a("train-eps"), cfg.seed, step_u, slot_u}));
      Tensor eps = randn(sample.pixels.shape(), er);

      Rng dr(key_of({fnv1a("train-drop"), cfg.seed, step_u, slot_u}));
      std::vector<int64_t> caption = sample.caption;
      if (dr.uniform() < cfg.caption_dropout_p) caption.clear();

      Tensor first = take_leading(sample.pixels, 0);
      auto [mask, img] = build_indicators({first}, {0}, cfg.model);
      Tensor t_rep =
          encode_caption(caption, st.model.vocab, cfg.model.n_max, cfg.model.f);

      VModel fn = [&](const Tensor& z_t, int64_t tt) {
        return forward(st.model, make_input(z_t, mask, img), t_rep, tt).v_pred;
      };
      Tensor loss = training_loss(fn, sample.pixels, t, eps, st.sched);
      total = total.defined() ? add(total, loss) : loss;
    }
    total = scale(total, 1.0 / static_cast<double>(cfg.batch_size));
  }
  double lv = total.item();
  check(std::isfinite(lv),
        "non-finite loss at step " + std::to_string(st.step));
  tape.backward(total);

  auto ps = st.model.params();
  adam_step(ps, st.opt, cfg, st.step + 1);
  ++st.step;
  return lv;
}

void train(TrainState& st, std::string* loss_csv, std::ostream* progress,
           int64_t progress_every) {
  std::ostringstream csv;
  csv << "step,loss\n" << std::setprecision(17);
  while (st.step < st.cfg.steps) {
    int64_t at = st.step;
    double loss = train_step(st);
    csv << at << "," << loss << "\n";
    if (progress && (at % progress_every == 0 || at + 1 == st.cfg.steps))
      *progress << "step " << at << " loss " << loss << "\n" << std::flush;
  }
  if (loss_csv) *loss_csv = csv.str();
}

void save_checkpoint(TrainState& st, const std::string& path) {
  auto ps = st.model.params();
  ensure_opt_sized(st.opt, ps);

  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["config"] = train_config_to_json(st.cfg);
  manifest["step"] = st.step;

  auto tensors = nlohmann::json::array();
  std::string blob;
  auto add_entry = [&](const std::string& name, const Shape& shape,
                       const std::vector<double>& vals) {
    nlohmann::json e;
    e["name"] = name;
    e["shape"] = shape;
    e["byte_offset"] = blob.size();
    tensors.push_back(e);
    append_f32(blob, vals);
  };
  for (auto& [name, p] : ps) add_entry(name, p->shape(), p->values());
  for (size_t i = 0; i < ps.size(); ++i)
    add_entry("adam.m." + ps[i].first, ps[i].second->shape(), st.opt.m[i]);
  for (size_t i = 0; i < ps.size(); ++i)
    add_entry("adam.v." + ps[i].first, ps[i].second->shape(), st.opt.v[i]);
  manifest["tensors"] = tensors;

  write_file(path, manifest.dump() + "\n" + blob);
}

TrainState load_checkpoint(const std::string& path) {
  std::string raw = read_file(path);
  size_t nl = raw.find('\n');
  check(nl != std::string::npos,
        "corrupt checkpoint: no manifest line in " + path);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(raw.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    fail("corrupt checkpoint manifest in " + path + ": " + e.what());
  }
  check(manifest.contains("format_version") &&
            manifest["format_version"].get<int>() == 1,
        "unknown checkpoint format_version in " + path);

  TrainState st;
  st.cfg = train_config_from_json(manifest.at("config"));
  st.sched = make_schedule(st.cfg.model.T, st.cfg.sched.beta_start,
                           st.cfg.sched.beta_end,
                           st.cfg.sched.rescale_zero_terminal);
  st.model = build_model(st.cfg.model, st.cfg.variant);
  st.step = manifest.at("step").get<int64_t>();

  auto ps = st.model.params();
  const auto& tensors = manifest.at("tensors");
  check(tensors.size() == 3 * ps.size(),
        "checkpoint lists " + std::to_string(tensors.size()) +
            " tensors, expected " + std::to_string(3 * ps.size()));
  const std::string blob = raw.substr(nl + 1);
  size_t running = 0;
  st.opt.m.resize(ps.size());
  st.opt.v.resize(ps.size());
  for (size_t e = 0; e < tensors.size(); ++e) {
    size_t i = e % ps.size();
    std::string want_name = e < ps.size() ? ps[i].first
                            : e < 2 * ps.size() ? "adam.m." + ps[i].first
                                                : "adam.v." + ps[i].first;
    const auto& entry = tensors[e];
    check(entry.at("name").get<std::string>() == want_name,
          "checkpoint tensor order mismatch: expected " + want_name);
    Shape shape = entry.at("shape").get<Shape>();
    check(shape == ps[i].second->shape(),
          "shape mismatch vs config for " + want_name + ": " +
              shape_str(shape) + " vs " + shape_str(ps[i].second->shape()));
    check(entry.at("byte_offset").get<size_t>() == running,
          "corrupt checkpoint: bad byte_offset for " + want_name);
    std::vector<double> vals =
        read_f32(blob, running, numel_of(shape), want_name);
    running += static_cast<size_t>(numel_of(shape)) * 4;
    if (e < ps.size())
      *ps[i].second = Tensor(shape, std::move(vals)).requires_grad_();
    else if (e < 2 * ps.size())
      st.opt.m[i] = std::move(vals);
    else
      st.opt.v[i] = std::move(vals);
  }
  check(running == blob.size(),
        "checkpoint blob has " + std::to_string(blob.size()) +
            " bytes, manifest accounts for " + std::to_string(running));
  return st;
}

}  // namespace ctgv
