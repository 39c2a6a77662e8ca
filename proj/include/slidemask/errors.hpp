// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#pragma once

#include <stdexcept>
#include <string>

namespace slidemask {

/// Breach of a correctness gate (equivalence deviation, invariant violation).
/// The CLI maps this to exit code 2, distinguishing bugs from misuse.
class gate_error : public std::runtime_error {
 public:
  explicit gate_error(const std::string& what) : std::runtime_error(what) {}
};

/// A cache consumer referenced an entry that was evicted or never stored.
class eviction_error : public gate_error {
 public:
  explicit eviction_error(const std::string& what) : gate_error(what) {}
};

}  // namespace slidemask
