#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace mmt {

// Deterministic RNG. mt19937_64 output is fully specified by the standard;
// all derived draws below are implemented here rather than with
// std::*_distribution, whose sequences vary across library vendors.
class RngState {
 public:
  explicit RngState(std::uint64_t seed = 42) : engine_(seed) {}

  std::uint64_t raw() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_int: n must be positive");
    // rejection sampling keeps the draw exactly uniform
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller; the spare draw is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Index draw from a categorical distribution given as nonnegative weights.
  template <typename Real>
  int multinoulli(const std::vector<Real>& probs) {
    double u = uniform();
    double cum = 0.0;
    for (size_t i = 0; i < probs.size(); ++i) {
      cum += static_cast<double>(probs[i]);
      if (u < cum) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;  // guard against rounding
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mmt
