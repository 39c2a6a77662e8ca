// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#pragma once

#include <cstdint>
#include <map>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "slidemask/model.hpp"

namespace slidemask {

enum class RetentionPolicy : uint8_t { Full, WindowOnly };

std::string retention_name(RetentionPolicy p);
RetentionPolicy retention_from_name(const std::string& name);

/// One cached key/value pair, tagged with its absolute position and role.
struct KvEntry {
  int position = 0;
  SegmentRole role;
  std::vector<double> key;    // [d_model], rotary already applied
  std::vector<double> value;  // [d_model]
};

struct MemoryReport {
  size_t sos = 0, dup = 0, orig = 0, query = 0;
  size_t peak_entries_per_layer = 0;

  size_t total() const { return sos + dup + orig + query; }
};

/// Per-layer key/value store for one incremental decoding session. Entries
/// within a layer are kept in strictly increasing position order. Under
/// WindowOnly retention, duplicate-segment entries are dropped at the end of
/// prefill, once every prefix row that needs them has been computed.
class KvCache {
 public:
  KvCache() = default;
  KvCache(const ModelConfig& config, RetentionPolicy retention);

  RetentionPolicy retention() const { return retention_; }
  size_t entries_per_layer() const;
  bool has_position(int position) const;
  MemoryReport memory_report() const;

  /// Throws eviction_error if `position` is not resident.
  const KvEntry& entry(size_t layer, int position) const;

  void append(size_t layer, KvEntry entry);
  void evict_role(SegmentKind kind);
  void note_peak();

 private:
  RetentionPolicy retention_ = RetentionPolicy::Full;
  std::vector<std::vector<KvEntry>> layers_;
  size_t peak_ = 0;
};

/// Incremental decoding under an explicit per-position visible set.
struct StepResult {
  std::vector<double> logits;  // [vocab]
};

/// Feeds one token at `position` with rotary position id `position_id`,
/// attending exactly `visible_positions` (which must include `position`
/// itself and only resident entries). Returns next-token logits.
StepResult step(KvCache& cache, const ModelState& model, int token, int position,
                int position_id, std::span<const int> visible_positions);

struct PrefillResult {
  KvCache cache;
  std::vector<double> last_logits;  // logits at the final prefix position
  size_t prefix_length = 0;
};

/// Runs all non-query positions through the masked incremental path, then
/// applies the retention policy. Requires a causal spec: incremental
/// decoding cannot realize right-to-left-free masks that reference future
/// keys.
PrefillResult prefill(const ModelState& model, const PromptLayout& layout,
                      const AttentionMask& mask, const MaskSpec& spec,
                      std::span<const int> position_ids, RetentionPolicy retention);

/// Runs the query segment through step() and returns logits at every query
/// position; the last row is the label-scoring row.
std::vector<std::vector<double>> decode_query(KvCache& cache, const ModelState& model,
                                              const PromptLayout& layout,
                                              const AttentionMask& mask,
                                              std::span<const int> position_ids);

// ============================================================================
// Precomputed demonstration store
// ============================================================================

/// Key: content hash over demo tokens + spec + position policy. The full
/// canonical key string is retained so fingerprint collisions with
/// differing content are rejected instead of silently reused.
struct DemoStoreEntry {
  uint64_t fingerprint = 0;
  std::string canonical_key;
  ModelConfig config;
  PositionPolicy position_policy = PositionPolicy::Absolute;
  MaskSpec spec;
  /// Prefix cache state: SOS + ORIG entries per layer (WindowOnly form).
  std::vector<std::vector<KvEntry>> layers;
  std::vector<double> last_logits;
  size_t prefix_length = 0;
};

class DemoStore {
 public:
  /// Computes (or reuses) the windowed prefix for a demo set. Throws
  /// gate_error on fingerprint collision with differing content.
  const DemoStoreEntry& precompute_demos(const ModelState& model,
                                         std::span<const Demonstration> demos,
                                         const MaskSpec& spec, PositionPolicy policy);

  const DemoStoreEntry* find(uint64_t fingerprint) const;
  size_t size() const;

  void save_entry(uint64_t fingerprint, const std::string& path) const;
  uint64_t load_entry(const std::string& path, const ModelConfig& expected_config);

 private:
  mutable std::shared_mutex mutex_;
  std::map<uint64_t, DemoStoreEntry> entries_;
};

uint64_t demo_set_fingerprint(std::span<const Demonstration> demos, const MaskSpec& spec,
                              PositionPolicy policy);
std::string demo_set_canonical_key(std::span<const Demonstration> demos, const MaskSpec& spec,
                                   PositionPolicy policy);

/// Serves a query against a precomputed entry: seeds a fresh cache from the
/// stored prefix and decodes the query segment. Logits match the monolithic
/// masked forward within 1e-5.
std::vector<std::vector<double>> serve_query(const DemoStoreEntry& entry,
                                             const ModelState& model,
                                             std::span<const Demonstration> demos,
                                             const QueryInput& query);

}  // namespace slidemask
