// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "slidemask/hash.hpp"

namespace slidemask {

/// Deterministic RNG with hand-rolled distributions so that streams are
/// bit-stable across standard library versions. Core generator is
/// splitmix64, which is more than enough for test-data generation and
/// weight init at this scale.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {
    // Avoid the all-zero fixed point and decorrelate small seeds.
    next_u64();
    next_u64();
  }

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, bound). Rejection sampling keeps the stream unbiased.
  uint64_t next_below(uint64_t bound);

  /// Uniform integer in [lo, hi] inclusive.
  int64_t next_int(int64_t lo, int64_t hi);

  /// Uniform double in [0, 1) with 53 bits of precision.
  double next_unit();

  /// Standard normal via Box-Muller (caches the second deviate).
  double next_normal();

  double next_normal(double mean, double stddev) { return mean + stddev * next_normal(); }

  bool next_bool() { return (next_u64() & 1ull) != 0; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  template <typename T>
  const T& pick(const std::vector<T>& v) {
    return v[static_cast<size_t>(next_below(v.size()))];
  }

 private:
  uint64_t state_;
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

/// Derives a named sub-seed from a root seed. All randomness in a run flows
/// from one root through these, so manifests can record the full tree.
uint64_t derive_seed(uint64_t root, std::string_view name);
uint64_t derive_seed(uint64_t root, std::string_view name, uint64_t index);

}  // namespace slidemask
