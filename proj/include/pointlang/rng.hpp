#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "pointlang/common.hpp"

namespace pointlang {

// Seedable counter-style generator (splitmix64 core). Streams are derived by
// name or index so independent consumers never share state; the same seed
// yields bit-identical sequences on every platform. All stochastic operations
// in this codebase take an explicit Rng handle.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  // Independent child stream; deterministic in (parent seed, label).
  Rng child(std::string_view label) const {
    return Rng(mix(state_ ^ fnv1a64(label.data(), label.size())));
  }
  Rng child(std::uint64_t index) const {
    return Rng(mix(state_ ^ mix(index + 0x9e3779b97f4a7c15ull)));
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix(state_);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) fail("uniform_int: n must be positive");
    // Rejection sampling to avoid modulo bias.
    std::uint64_t bound = ~std::uint64_t(0) - ~std::uint64_t(0) % n;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= bound);
    return v % n;
  }

  // Standard normal via Box-Muller. Consumes exactly two uniforms per call
  // (no cached spare) so the stream position stays easy to reason about.
  double gaussian();

  std::vector<double> gaussian_vec(std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = gaussian();
    return v;
  }

  // Fisher-Yates permutation of [0, n).
  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    for (int i = n - 1; i > 0; --i) {
      int j = int(uniform_int(std::uint64_t(i) + 1));
      std::swap(p[i], p[j]);
    }
    return p;
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }
  std::uint64_t state_;
};

}  // namespace pointlang
