#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace mb {

// Seeded RNG with portable derived distributions. std:: distribution
// objects are implementation-defined, so uniform/normal are built
// directly on the mt19937_64 output stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n] inclusive
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == UINT64_MAX) return eng_();
    const std::uint64_t bound = n + 1;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return x % bound;
  }

  double normal() {
    // Box-Muller, one value per call (spare discarded for simplicity)
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  template <class It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      std::uint64_t j = uniform_int(i - 1);
      std::swap(first[i - 1], first[j]);
    }
  }

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

}  // namespace mb
