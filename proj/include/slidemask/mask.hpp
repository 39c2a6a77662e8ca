// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "slidemask/layout.hpp"

namespace slidemask {

// ============================================================================
// Attention masks
// ============================================================================

/// Dense n x n boolean visibility matrix, bit-packed per row. Entry (q, k)
/// is true iff the token at query position q may attend the token at key
/// position k. Convention is fixed as (query_row, key_column).
class AttentionMask {
 public:
  AttentionMask() = default;
  explicit AttentionMask(size_t n);

  size_t n() const { return n_; }

  bool at(size_t q, size_t k) const {
    return (words_[q * words_per_row_ + (k >> 6)] >> (k & 63)) & 1ull;
  }
  void set(size_t q, size_t k, bool value = true);

  /// Ascending key positions visible from row q.
  std::vector<size_t> visible_in_row(size_t q) const;
  size_t row_count(size_t q) const;
  size_t count() const;

  /// Every row must contain its diagonal cell; a fully-masked row can never
  /// reach the softmax.
  void validate() const;

  bool operator==(const AttentionMask& other) const;
  bool subset_of(const AttentionMask& other) const;

  /// Cells present in this mask but not in `other`.
  std::vector<std::pair<size_t, size_t>> difference(const AttentionMask& other) const;

 private:
  size_t n_ = 0;
  size_t words_per_row_ = 0;
  std::vector<uint64_t> words_;
};

// ============================================================================
// Mask specifications
// ============================================================================

enum class MaskMethod : uint8_t {
  Regular,      // plain lower-triangular causal attention
  FullAttnV1,   // Regular plus demo->demo left-to-right
  FullAttnV2,   // V1 plus demo->query left-to-right
  Rd,           // lower-triangular over the repeated layout
  RdScaNoSos,   // sliding windows, start token not pinned
  RdSca,        // sliding windows, start token always visible
};

enum class SosPolicy : uint8_t { AlwaysVisible, WindowOnly };
enum class DupPolicy : uint8_t { CausalAmongDups, IsolatedDups };

/// AllDemos: the query attends every original demonstration.
/// LastN(n): the query attends only the last n originals.
struct QueryPolicy {
  bool all_demos = true;
  int last_n = 0;

  static QueryPolicy all() { return {true, 0}; }
  static QueryPolicy last(int n) { return {false, n}; }
  bool operator==(const QueryPolicy&) const = default;
};

bool method_uses_repeated_layout(MaskMethod m);
bool method_is_causal(MaskMethod m);
bool method_is_windowed(MaskMethod m);  // RdSca / RdScaNoSos

std::string method_name(MaskMethod m);
MaskMethod method_from_name(const std::string& name);

/// Declarative description of one masking method instance.
struct MaskSpec {
  MaskMethod method = MaskMethod::Regular;
  int k = 0;
  int window_w = 0;  // window size in demonstrations; meaningful for windowed methods
  SosPolicy sos_policy = SosPolicy::AlwaysVisible;
  DupPolicy dup_policy = DupPolicy::CausalAmongDups;
  QueryPolicy query_policy = QueryPolicy::all();

  void validate() const;
  uint64_t fingerprint() const;
  std::string to_json() const;
  static MaskSpec from_json(const std::string& text);

  static MaskSpec regular(int k);
  static MaskSpec full_attn_v1(int k);
  static MaskSpec full_attn_v2(int k);
  static MaskSpec rd(int k);
  static MaskSpec rdsca(int k, int w, DupPolicy dup = DupPolicy::CausalAmongDups,
                        QueryPolicy query = QueryPolicy::all());
  static MaskSpec rdsca_no_sos(int k, int w, DupPolicy dup = DupPolicy::CausalAmongDups,
                               QueryPolicy query = QueryPolicy::all());
};

// ============================================================================
// Region taxonomy
// ============================================================================

/// Partition of mask cells. Every (q, k) cell maps to exactly one label.
enum class Region : uint8_t {
  R1,    // query -> original demonstrations (right-to-left)
  R2,    // original -> earlier original (right-to-left)
  R3,    // right-to-left involving a duplicate, minus redundant cells
  R4,    // attention to the start token (key column 0)
  R5,    // redundant context: orig(i)->dup(j<=i) and query->dup(j)
  R6,    // demonstration -> later demonstration (left-to-right)
  R7,    // demonstration -> query (left-to-right)
  R8,    // remaining left-to-right (start-token row)
  Self,  // within-segment causal cells, always visible
  None,  // within-segment anti-causal cells
};

constexpr std::array<Region, 10> kAllRegions = {
    Region::R1, Region::R2, Region::R3, Region::R4, Region::R5,
    Region::R6, Region::R7, Region::R8, Region::Self, Region::None};

std::string region_name(Region r);

Region classify_region(const PromptLayout& layout, size_t q_pos, size_t k_pos);

/// Cell counts per region over the whole n x n grid.
std::array<size_t, 10> region_counts(const PromptLayout& layout);

// ============================================================================
// Constructors and analyses
// ============================================================================

/// Demonstration-window membership for windowed methods: the W demo
/// segments ending at ORIG(i), taken as a suffix of
/// [DUP(i+1..K), ORIG(1..i)]. `sos_visible` mirrors the spec's policy.
struct DemoWindow {
  std::vector<SegmentRole> segments;
  bool sos_visible = false;
};

DemoWindow demo_window(const MaskSpec& spec, int demo_index);
DemoWindow query_window(const MaskSpec& spec);

AttentionMask build_mask(const MaskSpec& spec, const PromptLayout& layout);

/// Mask containing exactly the cells whose region is in `regions`, plus
/// Self cells. Column 0 is included when R4 is in the set or the layout is
/// plain (plain causal attention necessarily includes the start column).
AttentionMask compose_mask_from_regions(const std::vector<Region>& regions,
                                        const PromptLayout& layout);

/// Reflexive transitive reachability over visible attention edges: entry
/// (t, p) true iff content at position p can influence the output at t.
AttentionMask visibility_closure(const AttentionMask& mask);

/// Entry i (0-based, i < K): distinct other demonstrations, by content
/// identity, visible to ORIG(i+1); entry K: distinct demonstrations visible
/// to the query.
std::vector<int> nshot_profile(const MaskSpec& spec, const PromptLayout& layout);

std::string nshot_to_string(const std::vector<int>& profile);  // "0-1-2-3-4"

}  // namespace slidemask
