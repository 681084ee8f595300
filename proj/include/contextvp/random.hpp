#pragma once

#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

namespace cvp {

/// splitmix64 (Steele, Lea, Flood). Fixed algorithm so that data generation
/// and initialization are reproducible by other implementations.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) from the top 53 bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n) by multiply-shift on the top 32 bits.
  std::uint64_t below(std::uint64_t n) { return ((*this)() >> 32) * n >> 32; }

 private:
  std::uint64_t state_;
};

/// Fisher-Yates shuffle with a fixed draw sequence (std::shuffle's is
/// implementation-defined).
template <typename T>
void shuffle(std::vector<T>& items, SplitMix64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace cvp
