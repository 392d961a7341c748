#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace smoe {

// Deterministic splitmix64 generator. Every random decision in the project
// flows from one 64-bit user seed through split() streams, so identical
// seeds reproduce identical runs on any platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Derives an independent child stream. Stable: does not advance this
  // generator, and the same tag always yields the same child.
  Rng split(std::uint64_t tag) const {
    Rng child(state_ ^ (0x517cc1b727220a95ULL + tag * 0x2545f4914f6cdd1dULL));
    child.next_u64();
    child.next_u64();
    return child;
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in {0, ..., n-1}. Modulo bias is negligible for n << 2^64.
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller; stateless between calls.
  double next_normal() {
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = next_double();
    double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace smoe
