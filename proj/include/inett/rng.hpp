#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace inett {

/// Seeded random stream. Draws are hand-rolled on top of mt19937_64 so that
/// outputs do not depend on the standard library's distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  /// uniform on [0, 1)
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// inclusive integer range
  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) {
    std::uint64_t span = hi - lo + 1;
    return lo + static_cast<std::uint64_t>(uniform() * static_cast<double>(span)) % span;
  }

  /// standard normal via Box-Muller, one value per call (cached pair)
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  /// Fisher-Yates shuffle of 0..n-1
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(0, i - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace inett
