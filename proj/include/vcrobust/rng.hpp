#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>

namespace vcrobust {

/// SplitMix64 finalizer. Used for seed derivation and counter-based hashing.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// 64-bit FNV-1a over raw bytes.
constexpr std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) noexcept {
  return splitmix64(a ^ splitmix64(b + 0x632BE59BD9B4E019ULL));
}

/// Deterministic random stream.
///
/// Built on std::mt19937_64, whose output sequence is fixed by the standard,
/// and on hand-written transforms (no std::*_distribution, whose algorithms
/// are implementation-defined). Single owner; derive per-task streams with
/// split().
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (cosine branch only, two draws per call).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Poisson sample by sequential inversion (one uniform per call).
  /// Falls back to a rounded normal approximation when exp(-lambda)
  /// underflows.
  std::uint64_t poisson(double lambda) {
    if (!(lambda > 0.0)) return 0;
    if (lambda > 700.0) {
      const double v = std::round(lambda + std::sqrt(lambda) * normal());
      return v < 0.0 ? 0 : static_cast<std::uint64_t>(v);
    }
    const double u = uniform();
    double p = std::exp(-lambda);
    double cdf = p;
    std::uint64_t k = 0;
    const double k_max = lambda + 40.0 * std::sqrt(lambda) + 50.0;
    while (u >= cdf && static_cast<double>(k) < k_max) {
      ++k;
      p *= lambda / static_cast<double>(k);
      cdf += p;
    }
    return k;
  }

  /// Stream for task `index`, seeded with seed + index.
  Rng split(std::uint64_t index) const { return Rng(seed_ + index); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace vcrobust
