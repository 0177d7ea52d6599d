#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace sparsecbct {

/// Seeded generator with platform-independent derived distributions.
/// std::uniform_real_distribution and friends are implementation-defined,
/// so the conversions from raw engine output are done here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n), unbiased (rejection sampling).
  std::uint64_t below(std::uint64_t n);

  /// Standard normal via Box-Muller.
  double normal();

  /// Poisson variate (Knuth for small means, normal approximation above 64).
  std::uint64_t poisson(double mean);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// SplitMix64 finalizer; derives independent per-item seeds from a master
/// seed and an index.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

}  // namespace sparsecbct
