// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace slidemask {

/// Closed toy vocabulary: whitespace-level tokens with two reserved ids.
/// Keeping the vocabulary closed and explicit makes every layout, mask and
/// model run in the test suite byte-deterministic.
class Vocabulary {
 public:
  static constexpr int kSos = 0;
  static constexpr int kUnk = 1;

  Vocabulary();

  /// Adds a token if absent; returns its id either way.
  int intern(const std::string& token);

  /// Id for a known token, kUnk for anything else.
  int id_of(const std::string& token) const;

  /// Lookup that distinguishes "unknown" from the <UNK> token itself.
  std::optional<int> find(const std::string& token) const;

  const std::string& token_of(int id) const;

  int size() const { return static_cast<int>(tokens_.size()); }

  uint64_t fingerprint() const;

  /// JSON object {token: id, ...}; reserved ids 0=<SOS>, 1=<UNK>.
  std::string to_json() const;
  static Vocabulary from_json(const std::string& text);

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace slidemask
