#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dto {

/// Seeded generator with named sub-streams.
///
/// Streams are derived by hashing a name into the root seed, so "init",
/// "augment", "synth", "noise" and friends never share state. Uniform and
/// normal variates are computed from raw 64-bit draws here rather than through
/// <random> distributions, whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(mix(seed)) {}

  Rng stream(std::string_view name) const;
  Rng stream(std::uint64_t index) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  bool bernoulli(double p) { return uniform() < p; }

 private:
  static std::uint64_t mix(std::uint64_t x);

  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dto
