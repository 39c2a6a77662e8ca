// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "slidemask/vocab.hpp"

namespace slidemask {

// ============================================================================
// Segment roles
// ============================================================================

enum class SegmentKind : uint8_t { Sos, Dup, Orig, Query };

/// Role of a contiguous token span inside a prompt. `index` is the 1-based
/// demonstration number for Dup/Orig and 0 otherwise. Dup(1) never occurs:
/// the first demonstration is never duplicated.
struct SegmentRole {
  SegmentKind kind = SegmentKind::Sos;
  int index = 0;

  static SegmentRole sos() { return {SegmentKind::Sos, 0}; }
  static SegmentRole dup(int i) { return {SegmentKind::Dup, i}; }
  static SegmentRole orig(int i) { return {SegmentKind::Orig, i}; }
  static SegmentRole query() { return {SegmentKind::Query, 0}; }

  bool is_demo() const { return kind == SegmentKind::Dup || kind == SegmentKind::Orig; }

  bool operator==(const SegmentRole&) const = default;
};

std::string role_name(const SegmentRole& role);  // "SOS", "DUP2", "ORIG1", "QUERY"

// ============================================================================
// Demonstrations and label maps
// ============================================================================

/// One raw task example before templating: input symbols plus a class index.
struct RawExample {
  std::vector<std::string> input;
  int class_index = 0;
};

enum class LabelMode : uint8_t { Natural, SemanticallyUnrelated };

/// Ordered class-index -> label-token mapping. Label ids must be pairwise
/// distinct so next-token scoring can separate the classes.
struct LabelMap {
  std::vector<int> label_ids;  // position = class index
  LabelMode mode = LabelMode::SemanticallyUnrelated;

  int n_classes() const { return static_cast<int>(label_ids.size()); }
  void validate() const;
};

/// A templated input-label pair. `input_tokens` is the rendered input span
/// ending with the label cue; the label token itself is appended when the
/// demonstration is materialized into a layout. Queries reuse the same
/// rendering without the label.
struct Demonstration {
  std::vector<int> input_tokens;
  int label_id = -1;
  int template_id = 0;

  /// Full token span as it appears in a prompt: input followed by label.
  std::vector<int> span_with_label() const;
};

/// Query side of an episode: rendered input, no label token.
struct QueryInput {
  std::vector<int> tokens;
  int template_id = 0;
};

/// Built-in pure token-level templates. No external template files: the
/// rendering must be byte-deterministic.
///   0: "Input:" <x...> "Label:"
///   1: <x...> "->"
///   2: "Q:" <x...> "A:"
int template_count();
std::vector<int> render_template(const Vocabulary& vocab, int template_id,
                                 std::span<const std::string> input);

Demonstration render_demonstration(const Vocabulary& vocab, const RawExample& x,
                                   const LabelMap& label_map, int template_id);
QueryInput render_query(const Vocabulary& vocab, std::span<const std::string> input,
                        int template_id);

// ============================================================================
// Prompt layouts
// ============================================================================

enum class LayoutVariant : uint8_t { Plain, Repeated };

struct Segment {
  SegmentRole role;
  size_t begin = 0;  // half-open [begin, end)
  size_t end = 0;

  size_t length() const { return end - begin; }
};

/// Token sequence plus an exact segment map. Immutable after construction;
/// all invariants (coverage, ordering, duplicate fidelity) are checked by
/// validate() at build time.
struct PromptLayout {
  std::vector<int> tokens;
  std::vector<Segment> segments;
  LayoutVariant variant = LayoutVariant::Plain;
  int k = 0;

  size_t size() const { return tokens.size(); }

  const Segment& segment_at(size_t position) const;
  SegmentRole role_at(size_t position) const;

  /// Segment whose role matches, throws if absent.
  const Segment& find_segment(const SegmentRole& role) const;
  bool has_segment(const SegmentRole& role) const;

  size_t query_begin() const { return find_segment(SegmentRole::query()).begin; }
  /// Final query token; label scoring reads next-token logits here.
  size_t query_end_position() const;

  void validate() const;
  uint64_t fingerprint() const;
  std::string to_json() const;
};

/// [SOS] ORIG(1..K) QUERY. K = 0 gives the zero-shot layout [SOS] QUERY.
PromptLayout build_plain_layout(std::span<const Demonstration> demos, const QueryInput& query);

/// [SOS] DUP(2..K) ORIG(1..K) QUERY. Duplicates carry identical token
/// content to their originals; K = 0 is rejected (nothing to repeat).
PromptLayout build_repeated_layout(std::span<const Demonstration> demos, const QueryInput& query);

/// Structural layout with placeholder tokens (demo i filled with one
/// repeated id), for mask analysis and rendering without a real task.
PromptLayout synthetic_layout(LayoutVariant variant, int k, size_t tokens_per_demo,
                              size_t query_tokens);

}  // namespace slidemask
