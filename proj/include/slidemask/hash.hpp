// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace slidemask {

/// Incremental FNV-1a (64-bit). Used for content fingerprints; stable across
/// platforms and runs, not cryptographic.
class Fnv1a {
 public:
  static constexpr uint64_t kOffset = 0xcbf29ce484222325ull;
  static constexpr uint64_t kPrime = 0x100000001b3ull;

  Fnv1a() = default;

  Fnv1a& bytes(const void* data, size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
      state_ ^= p[i];
      state_ *= kPrime;
    }
    return *this;
  }

  Fnv1a& str(std::string_view s) { return bytes(s.data(), s.size()); }

  Fnv1a& u64(uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    return bytes(buf, 8);
  }

  Fnv1a& i64(int64_t v) { return u64(static_cast<uint64_t>(v)); }

  Fnv1a& ints(std::span<const int> xs) {
    for (int x : xs) i64(x);
    return *this;
  }

  uint64_t digest() const { return state_; }

 private:
  uint64_t state_ = kOffset;
};

std::string hex64(uint64_t v);

uint64_t hash_bytes(std::span<const unsigned char> data);
uint64_t hash_string(std::string_view s);

}  // namespace slidemask
