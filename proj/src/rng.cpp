// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#include "slidemask/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace slidemask {

uint64_t Rng::next_below(uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("Rng::next_below: bound must be positive");
  const uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    uint64_t r = next_u64();
    if (r >= threshold) return r % bound;
  }
}

int64_t Rng::next_int(int64_t lo, int64_t hi) {
  if (lo > hi) throw std::invalid_argument("Rng::next_int: empty range");
  const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  return lo + static_cast<int64_t>(next_below(span));
}

double Rng::next_unit() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  double u1 = 0.0;
  do {
    u1 = next_unit();
  } while (u1 <= 0.0);
  const double u2 = next_unit();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  cached_normal_ = radius * std::sin(angle);
  has_cached_normal_ = true;
  return radius * std::cos(angle);
}

uint64_t derive_seed(uint64_t root, std::string_view name) {
  return Fnv1a().u64(root).str(name).digest();
}

uint64_t derive_seed(uint64_t root, std::string_view name, uint64_t index) {
  return Fnv1a().u64(root).str(name).u64(index).digest();
}

}  // namespace slidemask
