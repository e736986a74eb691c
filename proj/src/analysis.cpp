#include "ctgv/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include "ctgv/io.hpp"
#include "ctgv/trainer.hpp"

namespace ctgv {

DriftReport centroid_drift(const Tensor& attn, int64_t token_index, int64_t h,
                           int64_t w) {
  check(attn.rank() == 3, "attention map must be [f, h*w, n], got shape " +
                              shape_str(attn.shape()));
  check(h >= 1 && w >= 1, "grid dims must be positive");
  int64_t f = attn.dim(0);
  int64_t hw = attn.dim(1);
  int64_t n = attn.dim(2);
  check(hw == h * w, "pixel dim " + std::to_string(hw) + " does not match " +
                         std::to_string(h) + "x" + std::to_string(w));
  check(token_index >= 0 && token_index < n,
        "token index " + std::to_string(token_index) + " out of range for " +
            std::to_string(n) + " tokens");

  const std::vector<double>& a = attn.values();
  DriftReport rep;
  rep.centroids.resize(static_cast<size_t>(f));
  rep.entropy.resize(static_cast<size_t>(f));
  for (int64_t fr = 0; fr < f; ++fr) {
    double mass = 0.0, sx = 0.0, sy = 0.0;
    for (int64_t p = 0; p < hw; ++p) {
      double v = a[static_cast<size_t>((fr * hw + p) * n + token_index)];
      mass += v;
      sx += v * static_cast<double>(p % w);
      sy += v * static_cast<double>(p / w);
    }
    check(mass != 0.0, "cannot normalize attention column " +
                           std::to_string(token_index) + " in frame " +
                           std::to_string(fr) + ": zero mass");
    rep.centroids[static_cast<size_t>(fr)] = {sx / mass, sy / mass};
    double ent = 0.0;
    for (int64_t p = 0; p < hw; ++p) {
      double q =
          a[static_cast<size_t>((fr * hw + p) * n + token_index)] / mass;
      if (q > 0.0) ent -= q * std::log(q);
    }
    rep.entropy[static_cast<size_t>(fr)] = ent;
  }
  for (int64_t fr = 0; fr + 1 < f; ++fr) {
    const auto& c0 = rep.centroids[static_cast<size_t>(fr)];
    const auto& c1 = rep.centroids[static_cast<size_t>(fr + 1)];
    rep.total_drift += std::hypot(c1[0] - c0[0], c1[1] - c0[1]);
  }
  return rep;
}

double motion_energy(const Tensor& video) {
  check(video.rank() == 4, "video must be [f, h, w, c], got shape " +
                               shape_str(video.shape()));
  int64_t f = video.dim(0);
  check(f >= 2, "motion energy needs at least 2 frames, got " +
                    std::to_string(f));
  int64_t stride = video.dim(1) * video.dim(2) * video.dim(3);
  const std::vector<double>& v = video.values();
  double total = 0.0;
  for (int64_t fr = 0; fr + 1 < f; ++fr) {
    const double* a = v.data() + fr * stride;
    const double* b = a + stride;
    for (int64_t j = 0; j < stride; ++j) total += std::abs(b[j] - a[j]);
  }
  return total / static_cast<double>((f - 1) * stride);
}

std::vector<uint8_t> quantize_minmax(const std::vector<double>& values) {
  check(!values.empty(), "cannot quantize an empty map");
  auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  double lo = *lo_it, hi = *hi_it;
  std::vector<uint8_t> out(values.size(), 0);
  if (hi == lo) return out;
  double inv = 255.0 / (hi - lo);
  for (size_t i = 0; i < values.size(); ++i) {
    out[i] = static_cast<uint8_t>(std::floor((values[i] - lo) * inv + 0.5));
  }
  return out;
}

void write_pgm(const std::string& path, const std::vector<uint8_t>& gray,
               int64_t h, int64_t w) {
  check(static_cast<int64_t>(gray.size()) == h * w,
        "pixel count does not match " + std::to_string(h) + "x" +
            std::to_string(w));
  std::string body = "P5\n" + std::to_string(w) + " " + std::to_string(h) +
                     "\n255\n";
  body.append(reinterpret_cast<const char*>(gray.data()), gray.size());
  write_file(path, body);
}

void write_ppm(const std::string& path, const std::vector<uint8_t>& rgb,
               int64_t h, int64_t w) {
  check(static_cast<int64_t>(rgb.size()) == h * w * 3,
        "pixel count does not match " + std::to_string(h) + "x" +
            std::to_string(w) + "x3");
  std::string body = "P6\n" + std::to_string(w) + " " + std::to_string(h) +
                     "\n255\n";
  body.append(reinterpret_cast<const char*>(rgb.data()), rgb.size());
  write_file(path, body);
}

static uint8_t to_byte(double v) {
  double clamped = std::clamp(v, -1.0, 1.0);
  return static_cast<uint8_t>(std::floor((clamped + 1.0) * 127.5 + 0.5));
}

void write_video_frames(const std::string& dir, const std::string& stem,
                        const Tensor& video) {
  check(video.rank() == 4, "video must be [f, h, w, c], got shape " +
                               shape_str(video.shape()));
  int64_t f = video.dim(0), h = video.dim(1), w = video.dim(2),
          c = video.dim(3);
  if (c != 1 && c != 3) return;
  std::filesystem::create_directories(dir);
  const std::vector<double>& v = video.values();
  for (int64_t fr = 0; fr < f; ++fr) {
    std::vector<uint8_t> px(static_cast<size_t>(h * w * c));
    const double* base = v.data() + fr * h * w * c;
    for (int64_t j = 0; j < h * w * c; ++j) {
      px[static_cast<size_t>(j)] = to_byte(base[j]);
    }
    std::string path =
        dir + "/" + stem + "_frame" + std::to_string(fr) +
        (c == 3 ? ".ppm" : ".pgm");
    if (c == 3) {
      write_ppm(path, px, h, w);
    } else {
      write_pgm(path, px, h, w);
    }
  }
}

void write_trace_csv(const std::string& path, const Tensor& attn) {
  check(attn.rank() == 3, "attention map must be [f, h*w, n], got shape " +
                              shape_str(attn.shape()));
  int64_t f = attn.dim(0), hw = attn.dim(1), n = attn.dim(2);
  std::ostringstream os;
  os << f << " " << hw << " " << n << "\n" << std::setprecision(17);
  const std::vector<double>& a = attn.values();
  for (int64_t fr = 0; fr < f; ++fr) {
    for (int64_t p = 0; p < hw; ++p) {
      const double* row = a.data() + (fr * hw + p) * n;
      for (int64_t k = 0; k < n; ++k) {
        if (k) os << ",";
        os << row[k];
      }
      os << "\n";
    }
  }
  write_file(path, os.str());
}

Tensor read_trace_csv(const std::string& path) {
  std::istringstream is(read_file(path));
  int64_t f = 0, hw = 0, n = 0;
  std::string header;
  check(static_cast<bool>(std::getline(is, header)),
        "trace file is empty: " + path);
  {
    std::istringstream hs(header);
    check(static_cast<bool>(hs >> f >> hw >> n),
          "bad trace header in " + path);
    check(f >= 1 && hw >= 1 && n >= 1, "bad trace dims in " + path);
  }
  std::vector<double> vals;
  vals.reserve(static_cast<size_t>(f * hw * n));
  std::string line;
  int64_t rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const char* s = line.c_str();
    for (int64_t k = 0; k < n; ++k) {
      char* end = nullptr;
      double v = std::strtod(s, &end);
      check(end != s, "bad trace row " + std::to_string(rows) + " in " + path);
      vals.push_back(v);
      s = end;
      if (k + 1 < n) {
        check(*s == ',', "expected " + std::to_string(n) +
                             " columns in trace row " + std::to_string(rows));
        ++s;
      }
    }
    ++rows;
  }
  check(rows == f * hw, "trace has " + std::to_string(rows) +
                            " rows, header promises " + std::to_string(f * hw));
  return Tensor({f, hw, n}, std::move(vals));
}

void dump_attention(const std::string& dir, const std::string& stem,
                    const Tensor& attn, int64_t token_index, int64_t h,
                    int64_t w) {
  check(attn.rank() == 3, "attention map must be [f, h*w, n], got shape " +
                              shape_str(attn.shape()));
  int64_t f = attn.dim(0), hw = attn.dim(1), n = attn.dim(2);
  check(hw == h * w, "pixel dim " + std::to_string(hw) + " does not match " +
                         std::to_string(h) + "x" + std::to_string(w));
  check(token_index >= 0 && token_index < n,
        "token index " + std::to_string(token_index) + " out of range for " +
            std::to_string(n) + " tokens");
  std::filesystem::create_directories(dir);
  const std::vector<double>& a = attn.values();
  for (int64_t fr = 0; fr < f; ++fr) {
    std::vector<double> column(static_cast<size_t>(hw));
    for (int64_t p = 0; p < hw; ++p) {
      column[static_cast<size_t>(p)] =
          a[static_cast<size_t>((fr * hw + p) * n + token_index)];
    }
    write_pgm(dir + "/" + stem + "_frame" + std::to_string(fr) + ".pgm",
              quantize_minmax(column), h, w);
  }
  write_trace_csv(dir + "/" + stem + ".csv", attn);
}

int64_t verb_position(const std::vector<int64_t>& ids,
                      const Vocabulary& vocab) {
  for (size_t i = 0; i < ids.size(); ++i) {
    if (vocab.is_verb(ids[i])) return static_cast<int64_t>(i);
  }
  fail("caption has no verb token");
}

AblateReport ablate(const TrainState& ctgm_arm, const TrainState& vanilla_arm,
                    const std::vector<std::string>& prompts,
                    const std::vector<uint64_t>& seeds, int64_t steps,
                    double cfg_scale, int64_t attn_steps) {
  nlohmann::json ja = train_config_to_json(ctgm_arm.cfg);
  nlohmann::json jb = train_config_to_json(vanilla_arm.cfg);
  ja.erase("variant");
  jb.erase("variant");
  check(ja == jb, "checkpoint configs differ beyond the guidance variant");
  check(!prompts.empty(), "need at least one prompt");
  check(!seeds.empty(), "need at least one seed");
  check(attn_steps >= 1, "drift needs attention capture, attn_steps >= 1");

  const ModelConfig& mc = ctgm_arm.cfg.model;
  AblateReport rep;
  for (const std::string& prompt : prompts) {
    int64_t verb =
        verb_position(tokenize(prompt, ctgm_arm.model.vocab), ctgm_arm.model.vocab);
    for (uint64_t seed : seeds) {
      SampleRequest req;
      req.caption = prompt;
      req.steps = steps;
      req.cfg_scale = cfg_scale;
      req.seed = seed;
      req.attn_steps = attn_steps;
      SampleResult a = sample_video(ctgm_arm, req);
      SampleResult b = sample_video(vanilla_arm, req);

      AblateRow row;
      row.prompt = prompt;
      row.seed = seed;
      row.motion_ctgm = motion_energy(a.video);
      row.motion_vanilla = motion_energy(b.video);
      double da = 0.0, db = 0.0;
      for (const Tensor& m : a.mean_attn) {
        da += centroid_drift(m, verb, mc.h, mc.w).total_drift;
      }
      for (const Tensor& m : b.mean_attn) {
        db += centroid_drift(m, verb, mc.h, mc.w).total_drift;
      }
      row.drift_ctgm = da / static_cast<double>(a.mean_attn.size());
      row.drift_vanilla = db / static_cast<double>(b.mean_attn.size());
      rep.rows.push_back(std::move(row));
    }
  }

  double nrows = static_cast<double>(rep.rows.size());
  int64_t motion_wins = 0, drift_wins = 0;
  for (const AblateRow& r : rep.rows) {
    rep.mean_motion_ctgm += r.motion_ctgm / nrows;
    rep.mean_motion_vanilla += r.motion_vanilla / nrows;
    rep.mean_drift_ctgm += r.drift_ctgm / nrows;
    rep.mean_drift_vanilla += r.drift_vanilla / nrows;
    if (r.motion_ctgm > r.motion_vanilla) ++motion_wins;
    if (r.drift_ctgm > r.drift_vanilla) ++drift_wins;
  }
  rep.win_motion = static_cast<double>(motion_wins) / nrows;
  rep.win_drift = static_cast<double>(drift_wins) / nrows;
  return rep;
}

std::string ablate_to_csv(const AblateReport& report) {
  std::ostringstream os;
  os << "prompt,seed,motion_ctgm,motion_vanilla,drift_ctgm,drift_vanilla\n"
     << std::setprecision(17);
  for (const AblateRow& r : report.rows) {
    os << r.prompt << "," << r.seed << "," << r.motion_ctgm << ","
       << r.motion_vanilla << "," << r.drift_ctgm << "," << r.drift_vanilla
       << "\n";
  }
  os << "mean,," << report.mean_motion_ctgm << "," << report.mean_motion_vanilla
     << "," << report.mean_drift_ctgm << "," << report.mean_drift_vanilla
     << "\n";
  os << "win_rate,," << report.win_motion << ",," << report.win_drift << ",\n";
  return os.str();
}

}  // namespace ctgv
