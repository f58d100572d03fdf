#pragma once

#include <cstdint>
#include <string_view>

namespace man {

// Deterministic random source. All distribution transforms are implemented
// here (not via std::*_distribution, whose output is implementation-defined)
// so that identical seeds give identical streams on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  // Derives an independent stream from a base seed and a stream name
  // (e.g. "init", "data.train", "dropout"). Same (seed, name) -> same stream.
  static Rng stream(std::uint64_t base_seed, std::string_view name);

  std::uint64_t next_u64();

  // Uniform in [0, 1), 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);

  // Standard normal via Box-Muller (cached spare).
  double normal();

  // Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi);

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// FNV-1a, used for stream naming and the train/eval split.
std::uint64_t fnv1a64(std::string_view s);

}  // namespace man
