#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace ctgv {

// Counter-based deterministic RNG (splitmix64 core). Streams are cheap value
// types; independent streams are derived by key, not by sharing state, so the
// draw sequence for one purpose never shifts when another purpose adds or
// removes draws.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64();

  // Uniform in [0, 1), 53-bit resolution.
  double uniform();

  // Standard normal via Box-Muller. Two uniform draws per call, no caching,
  // so the stream position is a pure function of the call count.
  double normal();

  // Uniform integer in [0, n). Lemire reduction, single draw.
  uint64_t below(uint64_t n);

 private:
  uint64_t state_;
};

// Key derivation for independent streams: mix(seed, purpose), mix(key, index).
uint64_t mix64(uint64_t a, uint64_t b);
uint64_t key_of(std::initializer_list<uint64_t> parts);
uint64_t fnv1a(std::string_view s);

}  // namespace ctgv
