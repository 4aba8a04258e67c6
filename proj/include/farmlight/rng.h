#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace farmlight {

/// SplitMix64 (Steele, Lea, Flood); used to expand a 64-bit seed.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

/// xoshiro256** seeded through SplitMix64. Every stochastic step in the
/// project draws from one of these, so runs are reproducible bit-for-bit.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed);

  std::uint64_t next();
  std::uint64_t operator()() { return next(); }
  static constexpr std::uint64_t min() { return 0; }
  static constexpr std::uint64_t max() { return ~0ULL; }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n); n must be > 0.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller; the spare deviate is cached.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  void fill(std::span<std::uint8_t> out);

  /// Independent stream derived from this seed and a salt.
  static Rng substream(std::uint64_t seed, std::uint64_t salt);

 private:
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

void shuffle(std::span<std::size_t> items, Rng& rng);

}  // namespace farmlight
