// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#include "slidemask/hash.hpp"

namespace slidemask {

std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

uint64_t hash_bytes(std::span<const unsigned char> data) {
  return Fnv1a().bytes(data.data(), data.size()).digest();
}

uint64_t hash_string(std::string_view s) { return Fnv1a().str(s).digest(); }

}  // namespace slidemask
