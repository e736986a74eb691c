#include "ctgv/data.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ctgv/io.hpp"
#include "ctgv/ops.hpp"
#include "ctgv/rng.hpp"
#include "json.hpp"

namespace ctgv {

namespace {

const std::vector<std::string> kWords = {
    "pad",         "red",          "green",     "blue",
    "square",      "circle",       "moving_left", "moving_right",
    "moving_up",   "moving_down",  "still"};

constexpr int64_t kHalfExtent = 2;

}  // namespace

void validate(const ModelConfig& cfg) {
  check(cfg.f >= 1 && cfg.h >= 1 && cfg.w >= 1 && cfg.c >= 1 &&
            cfg.c_model >= 1 && cfg.n_max >= 1,
        "all model extents must be >= 1");
  check(cfg.c_model >= cfg.c, "c_model must be >= c");
  check(cfg.n_blocks >= 1, "need at least one block");
  check(cfg.T >= 1, "need at least one diffusion step");
}

int64_t Vocabulary::id_of(const std::string& word) const {
  for (size_t i = 0; i < words.size(); ++i)
    if (words[i] == word) return static_cast<int64_t>(i);
  fail("unknown token '" + word + "'");
}

Vocabulary make_vocabulary(int64_t c_model, uint64_t key) {
  Vocabulary v;
  v.words = kWords;
  Rng rng(mix64(key, fnv1a("vocab")));
  v.embedding = randn({v.size(), c_model}, rng).requires_grad_();
  return v;
}

std::vector<int64_t> tokenize(const std::string& caption,
                              const Vocabulary& vocab) {
  std::vector<int64_t> ids;
  std::istringstream in(caption);
  std::string word;
  while (in >> word) ids.push_back(vocab.id_of(word));
  return ids;
}

Tensor encode_caption(const std::vector<int64_t>& ids, const Vocabulary& vocab,
                      int64_t n_max, int64_t f) {
  check(static_cast<int64_t>(ids.size()) <= n_max,
        "caption length " + std::to_string(ids.size()) + " exceeds n_max " +
            std::to_string(n_max));
  std::vector<int64_t> padded(static_cast<size_t>(n_max), vocab.pad_id());
  for (size_t i = 0; i < ids.size(); ++i) {
    check(ids[i] >= 0 && ids[i] < vocab.size(),
          "token id " + std::to_string(ids[i]) + " out of range");
    padded[i] = ids[i];
  }
  return tile_axis(embed_rows(vocab.embedding, padded), 0, f);
}

VideoSample generate_sample(uint64_t seed, const ModelConfig& cfg) {
  validate(cfg);
  check(cfg.c == 3, "corpus renders 3 color channels, config has " +
                        std::to_string(cfg.c));
  check(cfg.n_max >= 3, "captions have 3 tokens; n_max must be >= 3");
  check(cfg.h >= 2 * kHalfExtent + 1 && cfg.w >= 2 * kHalfExtent + 1,
        "frame too small for the shape");

  Rng rng(key_of({fnv1a("sample"), seed}));
  int64_t color = 1 + static_cast<int64_t>(rng.below(3));
  int64_t shape = 4 + static_cast<int64_t>(rng.below(2));
  int64_t verb = 6 + static_cast<int64_t>(rng.below(5));
  int64_t dx = verb == 6 ? -1 : verb == 7 ? 1 : 0;
  int64_t dy = verb == 8 ? -1 : verb == 9 ? 1 : 0;

  int64_t cx = 0, cy = 0;
  bool placed = false;
  for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
    cx = kHalfExtent +
         static_cast<int64_t>(rng.below(static_cast<uint64_t>(
             cfg.w - 2 * kHalfExtent)));
    cy = kHalfExtent +
         static_cast<int64_t>(rng.below(static_cast<uint64_t>(
             cfg.h - 2 * kHalfExtent)));
    int64_t lx = cx + dx * (cfg.f - 1);
    int64_t ly = cy + dy * (cfg.f - 1);
    placed = lx >= kHalfExtent && lx < cfg.w - kHalfExtent &&
             ly >= kHalfExtent && ly < cfg.h - kHalfExtent;
  }
  check(placed, "no in-bounds trajectory for '" + kWords[static_cast<size_t>(
                    verb)] + "' after 100 draws");

  std::vector<double> px(
      static_cast<size_t>(cfg.f * cfg.h * cfg.w * cfg.c), -1.0);
  VideoSample out;
  for (int64_t fr = 0; fr < cfg.f; ++fr) {
    int64_t fx = cx + dx * fr;
    int64_t fy = cy + dy * fr;
    for (int64_t r = fy - kHalfExtent; r <= fy + kHalfExtent; ++r)
      for (int64_t col = fx - kHalfExtent; col <= fx + kHalfExtent; ++col) {
        if (shape == 5) {
          int64_t dd = (r - fy) * (r - fy) + (col - fx) * (col - fx);
          if (dd > kHalfExtent * kHalfExtent) continue;
        }
        px[static_cast<size_t>(((fr * cfg.h + r) * cfg.w + col) * cfg.c +
                               (color - 1))] = 1.0;
      }
    out.trajectory.push_back(
        {static_cast<double>(fx), static_cast<double>(fy)});
  }
  out.pixels = Tensor({cfg.f, cfg.h, cfg.w, cfg.c}, std::move(px));
  out.caption.assign(static_cast<size_t>(cfg.n_max), 0);
  out.caption[0] = color;
  out.caption[1] = shape;
  out.caption[2] = verb;
  return out;
}

void dump_corpus(const std::string& dir, const std::vector<uint64_t>& seeds,
                 const ModelConfig& cfg) {
  std::filesystem::create_directories(dir);
  std::string index;
  for (uint64_t seed : seeds) {
    VideoSample s = generate_sample(seed, cfg);
    save_tensor(dir + "/sample_" + std::to_string(seed) + ".tnsr", s.pixels);
    nlohmann::json row;
    row["seed"] = seed;
    row["caption_tokens"] = s.caption;
    auto traj = nlohmann::json::array();
    for (const auto& p : s.trajectory) traj.push_back({p[0], p[1]});
    row["trajectory"] = traj;
    index += row.dump() + "\n";
  }
  write_file(dir + "/index.jsonl", index);
}

}  // namespace ctgv
