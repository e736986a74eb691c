#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ctgv/config.hpp"
#include "ctgv/tensor.hpp"

namespace ctgv {

// Token ids are dense and pinned: pad=0, colors 1-3, shapes 4-5, verbs 6-10.
// The embedding table is a learned parameter; the all-pad caption doubles as
// the null condition for classifier-free guidance.
struct Vocabulary {
  std::vector<std::string> words;
  Tensor embedding;

  int64_t size() const { return static_cast<int64_t>(words.size()); }
  int64_t pad_id() const { return 0; }
  int64_t id_of(const std::string& word) const;
  bool is_verb(int64_t id) const { return id >= 6 && id <= 10; }
};

Vocabulary make_vocabulary(int64_t c_model, uint64_t key);

std::vector<int64_t> tokenize(const std::string& caption,
                              const Vocabulary& vocab);

// Lookup, pad to n_max, repeat per frame: [f, n_max, c_model] with all f
// slices identical. Differentiable into the table.
Tensor encode_caption(const std::vector<int64_t>& ids, const Vocabulary& vocab,
                      int64_t n_max, int64_t f);

// One solid shape on a -1 background, translating one pixel per frame along
// the verb's axis. Trajectory holds the shape center per frame as (x, y) =
// (column, row).
struct VideoSample {
  Tensor pixels;
  std::vector<int64_t> caption;
  std::vector<std::array<double, 2>> trajectory;
};

VideoSample generate_sample(uint64_t seed, const ModelConfig& cfg);

// Blob per sample plus a JSON-lines index {seed, caption_tokens, trajectory}.
void dump_corpus(const std::string& dir, const std::vector<uint64_t>& seeds,
                 const ModelConfig& cfg);

}  // namespace ctgv
