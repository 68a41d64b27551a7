#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace fairlens {

/// Derive an independent stream seed from (seed, tag) via one SplitMix64
/// step. Used to give train/val/test noise streams of the same experiment
/// seed disjoint state.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

/// Deterministic random stream.
///
/// Engine: std::mt19937_64, whose output sequence is fully specified by the
/// standard, so identical seeds reproduce identical streams on any platform.
/// Uniform doubles map the top 53 bits of one engine output to [0, 1);
/// standard normals come from the Box-Muller transform of two uniforms (the
/// spare value is cached). Bounded integers use rejection sampling, so no
/// modulo bias. Distribution adapters from <random> are intentionally not
/// used: their sequences are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller.
  double normal();

  /// Uniform integer in [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n);

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace fairlens
