// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#include "slidemask/mask.hpp"

#include <algorithm>
#include <stdexcept>

#include "json.hpp"
#include "slidemask/hash.hpp"

namespace slidemask {

// ============================================================================
// AttentionMask
// ============================================================================

AttentionMask::AttentionMask(size_t n)
    : n_(n), words_per_row_((n + 63) / 64), words_(n * words_per_row_, 0) {}

void AttentionMask::set(size_t q, size_t k, bool value) {
  uint64_t& word = words_[q * words_per_row_ + (k >> 6)];
  const uint64_t bit = 1ull << (k & 63);
  if (value)
    word |= bit;
  else
    word &= ~bit;
}

std::vector<size_t> AttentionMask::visible_in_row(size_t q) const {
  std::vector<size_t> out;
  for (size_t w = 0; w < words_per_row_; ++w) {
    uint64_t word = words_[q * words_per_row_ + w];
    while (word) {
      const int bit = std::countr_zero(word);
      out.push_back(w * 64 + static_cast<size_t>(bit));
      word &= word - 1;
    }
  }
  return out;
}

size_t AttentionMask::row_count(size_t q) const {
  size_t total = 0;
  for (size_t w = 0; w < words_per_row_; ++w)
    total += static_cast<size_t>(std::popcount(words_[q * words_per_row_ + w]));
  return total;
}

size_t AttentionMask::count() const {
  size_t total = 0;
  for (uint64_t w : words_) total += static_cast<size_t>(std::popcount(w));
  return total;
}

void AttentionMask::validate() const {
  for (size_t q = 0; q < n_; ++q) {
    if (!at(q, q))
      throw std::invalid_argument("AttentionMask: diagonal cell missing at row " +
                                  std::to_string(q));
  }
}

bool AttentionMask::operator==(const AttentionMask& other) const {
  return n_ == other.n_ && words_ == other.words_;
}

bool AttentionMask::subset_of(const AttentionMask& other) const {
  if (n_ != other.n_) return false;
  for (size_t i = 0; i < words_.size(); ++i) {
    if (words_[i] & ~other.words_[i]) return false;
  }
  return true;
}

std::vector<std::pair<size_t, size_t>> AttentionMask::difference(
    const AttentionMask& other) const {
  if (n_ != other.n_) throw std::invalid_argument("AttentionMask::difference: size mismatch");
  std::vector<std::pair<size_t, size_t>> out;
  for (size_t q = 0; q < n_; ++q) {
    for (size_t w = 0; w < words_per_row_; ++w) {
      uint64_t word = words_[q * words_per_row_ + w] & ~other.words_[q * words_per_row_ + w];
      while (word) {
        const int bit = std::countr_zero(word);
        out.emplace_back(q, w * 64 + static_cast<size_t>(bit));
        word &= word - 1;
      }
    }
  }
  return out;
}

// ============================================================================
// Method and policy names
// ============================================================================

bool method_uses_repeated_layout(MaskMethod m) {
  return m == MaskMethod::Rd || m == MaskMethod::RdScaNoSos || m == MaskMethod::RdSca;
}

bool method_is_causal(MaskMethod m) {
  return m != MaskMethod::FullAttnV1 && m != MaskMethod::FullAttnV2;
}

bool method_is_windowed(MaskMethod m) {
  return m == MaskMethod::RdScaNoSos || m == MaskMethod::RdSca;
}

std::string method_name(MaskMethod m) {
  switch (m) {
    case MaskMethod::Regular:
      return "regular";
    case MaskMethod::FullAttnV1:
      return "full_attn_v1";
    case MaskMethod::FullAttnV2:
      return "full_attn_v2";
    case MaskMethod::Rd:
      return "rd";
    case MaskMethod::RdScaNoSos:
      return "rdsca_no_sos";
    case MaskMethod::RdSca:
      return "rdsca";
  }
  return "?";
}

MaskMethod method_from_name(const std::string& name) {
  if (name == "regular") return MaskMethod::Regular;
  if (name == "full_attn_v1") return MaskMethod::FullAttnV1;
  if (name == "full_attn_v2") return MaskMethod::FullAttnV2;
  if (name == "rd") return MaskMethod::Rd;
  if (name == "rdsca_no_sos") return MaskMethod::RdScaNoSos;
  if (name == "rdsca") return MaskMethod::RdSca;
  throw std::invalid_argument("unknown mask method: " + name);
}

namespace {

std::string sos_policy_name(SosPolicy p) {
  return p == SosPolicy::AlwaysVisible ? "always_visible" : "window_only";
}

SosPolicy sos_policy_from_name(const std::string& name) {
  if (name == "always_visible") return SosPolicy::AlwaysVisible;
  if (name == "window_only") return SosPolicy::WindowOnly;
  throw std::invalid_argument("unknown sos policy: " + name);
}

std::string dup_policy_name(DupPolicy p) {
  return p == DupPolicy::CausalAmongDups ? "causal_among_dups" : "isolated_dups";
}

DupPolicy dup_policy_from_name(const std::string& name) {
  if (name == "causal_among_dups") return DupPolicy::CausalAmongDups;
  if (name == "isolated_dups") return DupPolicy::IsolatedDups;
  throw std::invalid_argument("unknown dup policy: " + name);
}

}  // namespace

// ============================================================================
// MaskSpec
// ============================================================================

void MaskSpec::validate() const {
  if (k < 0) throw std::invalid_argument("MaskSpec: negative K");
  if (method_uses_repeated_layout(method) && k < 1)
    throw std::invalid_argument("MaskSpec: " + method_name(method) + " requires K >= 1");
  if (method_is_windowed(method)) {
    if (window_w < 1 || window_w > k)
      throw std::invalid_argument("MaskSpec: window size W must satisfy 1 <= W <= K");
    if (method == MaskMethod::RdSca && sos_policy != SosPolicy::AlwaysVisible)
      throw std::invalid_argument("MaskSpec: rdsca implies sos_policy=always_visible");
    if (method == MaskMethod::RdScaNoSos && sos_policy != SosPolicy::WindowOnly)
      throw std::invalid_argument("MaskSpec: rdsca_no_sos implies sos_policy=window_only");
  }
  if (!query_policy.all_demos) {
    if (query_policy.last_n < 1 || query_policy.last_n > k)
      throw std::invalid_argument("MaskSpec: query policy last_n must satisfy 1 <= n <= K");
  }
}

uint64_t MaskSpec::fingerprint() const { return hash_string(to_json()); }

std::string MaskSpec::to_json() const {
  nlohmann::ordered_json j;
  j["method"] = method_name(method);
  j["k"] = k;
  j["window_w"] = window_w;
  j["sos_policy"] = sos_policy_name(sos_policy);
  j["dup_policy"] = dup_policy_name(dup_policy);
  if (query_policy.all_demos) {
    j["query_policy"] = {{"kind", "all_demos"}};
  } else {
    j["query_policy"] = {{"kind", "last_n"}, {"n", query_policy.last_n}};
  }
  return j.dump();
}

MaskSpec MaskSpec::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  MaskSpec spec;
  spec.method = method_from_name(j.at("method").get<std::string>());
  spec.k = j.at("k").get<int>();
  spec.window_w = j.value("window_w", 0);
  if (j.contains("sos_policy"))
    spec.sos_policy = sos_policy_from_name(j.at("sos_policy").get<std::string>());
  if (j.contains("dup_policy"))
    spec.dup_policy = dup_policy_from_name(j.at("dup_policy").get<std::string>());
  if (j.contains("query_policy")) {
    const auto& q = j.at("query_policy");
    const auto kind = q.at("kind").get<std::string>();
    if (kind == "all_demos") {
      spec.query_policy = QueryPolicy::all();
    } else if (kind == "last_n") {
      spec.query_policy = QueryPolicy::last(q.at("n").get<int>());
    } else {
      throw std::invalid_argument("unknown query policy kind: " + kind);
    }
  }
  spec.validate();
  return spec;
}

MaskSpec MaskSpec::regular(int k) {
  MaskSpec s;
  s.method = MaskMethod::Regular;
  s.k = k;
  return s;
}

MaskSpec MaskSpec::full_attn_v1(int k) {
  MaskSpec s = regular(k);
  s.method = MaskMethod::FullAttnV1;
  return s;
}

MaskSpec MaskSpec::full_attn_v2(int k) {
  MaskSpec s = regular(k);
  s.method = MaskMethod::FullAttnV2;
  return s;
}

MaskSpec MaskSpec::rd(int k) {
  MaskSpec s;
  s.method = MaskMethod::Rd;
  s.k = k;
  return s;
}

MaskSpec MaskSpec::rdsca(int k, int w, DupPolicy dup, QueryPolicy query) {
  MaskSpec s;
  s.method = MaskMethod::RdSca;
  s.k = k;
  s.window_w = w;
  s.sos_policy = SosPolicy::AlwaysVisible;
  s.dup_policy = dup;
  s.query_policy = query;
  s.validate();
  return s;
}

MaskSpec MaskSpec::rdsca_no_sos(int k, int w, DupPolicy dup, QueryPolicy query) {
  MaskSpec s;
  s.method = MaskMethod::RdScaNoSos;
  s.k = k;
  s.window_w = w;
  s.sos_policy = SosPolicy::WindowOnly;
  s.dup_policy = dup;
  s.query_policy = query;
  s.validate();
  return s;
}

// ============================================================================
// Region taxonomy
// ============================================================================

std::string region_name(Region r) {
  switch (r) {
    case Region::R1:
      return "R1";
    case Region::R2:
      return "R2";
    case Region::R3:
      return "R3";
    case Region::R4:
      return "R4";
    case Region::R5:
      return "R5";
    case Region::R6:
      return "R6";
    case Region::R7:
      return "R7";
    case Region::R8:
      return "R8";
    case Region::Self:
      return "SELF";
    case Region::None:
      return "NONE";
  }
  return "?";
}

Region classify_region(const PromptLayout& layout, size_t q_pos, size_t k_pos) {
  const Segment& sq = layout.segment_at(q_pos);
  const Segment& sk = layout.segment_at(k_pos);
  if (&sq == &sk) return k_pos <= q_pos ? Region::Self : Region::None;
  if (k_pos == 0) return Region::R4;
  if (q_pos == 0) return Region::R8;

  const SegmentRole rq = sq.role;
  const SegmentRole rk = sk.role;
  if (k_pos < q_pos) {
    if (rq.kind == SegmentKind::Query) {
      if (rk.kind == SegmentKind::Orig) return Region::R1;
      if (rk.kind == SegmentKind::Dup) return Region::R5;
    }
    if (rq.kind == SegmentKind::Orig) {
      if (rk.kind == SegmentKind::Orig) return Region::R2;
      if (rk.kind == SegmentKind::Dup)
        return rk.index <= rq.index ? Region::R5 : Region::R3;
    }
    if (rq.kind == SegmentKind::Dup && rk.kind == SegmentKind::Dup) return Region::R3;
    throw std::logic_error("classify_region: unreachable right-to-left cell");
  }
  // Left-to-right, different segments, q > 0.
  if (rq.is_demo() && rk.is_demo()) return Region::R6;
  if (rq.is_demo() && rk.kind == SegmentKind::Query) return Region::R7;
  throw std::logic_error("classify_region: unreachable left-to-right cell");
}

std::array<size_t, 10> region_counts(const PromptLayout& layout) {
  std::array<size_t, 10> counts{};
  const size_t n = layout.size();
  for (size_t q = 0; q < n; ++q) {
    for (size_t k = 0; k < n; ++k) {
      counts[static_cast<size_t>(classify_region(layout, q, k))]++;
    }
  }
  return counts;
}

// ============================================================================
// Windows
// ============================================================================

DemoWindow demo_window(const MaskSpec& spec, int demo_index) {
  spec.validate();
  if (!method_is_windowed(spec.method))
    throw std::invalid_argument("demo_window: method " + method_name(spec.method) +
                                " has no demonstration windows");
  if (demo_index < 1 || demo_index > spec.k)
    throw std::invalid_argument("demo_window: demo index out of range");
  // Full candidate list [DUP(i+1..K), ORIG(1..i)], then the suffix covering
  // exactly W demo segments (the W demos ending at ORIG(i)).
  std::vector<SegmentRole> candidates;
  for (int j = demo_index + 1; j <= spec.k; ++j) candidates.push_back(SegmentRole::dup(j));
  for (int j = 1; j <= demo_index; ++j) candidates.push_back(SegmentRole::orig(j));
  DemoWindow window;
  const size_t w = static_cast<size_t>(spec.window_w);
  window.segments.assign(candidates.end() - static_cast<long>(w), candidates.end());
  window.sos_visible = spec.sos_policy == SosPolicy::AlwaysVisible;
  return window;
}

DemoWindow query_window(const MaskSpec& spec) {
  spec.validate();
  if (!method_is_windowed(spec.method))
    throw std::invalid_argument("query_window: method " + method_name(spec.method) +
                                " has no query window");
  DemoWindow window;
  const int first = spec.query_policy.all_demos ? 1 : spec.k - spec.query_policy.last_n + 1;
  for (int j = first; j <= spec.k; ++j) window.segments.push_back(SegmentRole::orig(j));
  window.segments.push_back(SegmentRole::query());
  window.sos_visible = spec.sos_policy == SosPolicy::AlwaysVisible;
  return window;
}

// ============================================================================
// Mask constructors
// ============================================================================

namespace {

void check_layout_compat(const MaskSpec& spec, const PromptLayout& layout) {
  spec.validate();
  if (spec.k != layout.k)
    throw std::invalid_argument("build_mask: spec K=" + std::to_string(spec.k) +
                                " does not match layout K=" + std::to_string(layout.k));
  const bool wants_repeated = method_uses_repeated_layout(spec.method);
  const bool is_repeated = layout.variant == LayoutVariant::Repeated;
  if (wants_repeated != is_repeated)
    throw std::invalid_argument("build_mask: method " + method_name(spec.method) +
                                " requires a " + (wants_repeated ? "repeated" : "plain") +
                                " layout");
}

void fill_lower_triangular(AttentionMask& mask) {
  for (size_t q = 0; q < mask.n(); ++q)
    for (size_t k = 0; k <= q; ++k) mask.set(q, k);
}

/// Marks every (q, k) pair with k <= q where q lies in `row_segment` and k
/// in one of `window_segments` (own-segment cells included by the caller).
void fill_window_rows(AttentionMask& mask, const PromptLayout& layout,
                      const Segment& row_segment, const std::vector<SegmentRole>& window,
                      bool sos_visible) {
  for (size_t q = row_segment.begin; q < row_segment.end; ++q) {
    if (sos_visible) mask.set(q, 0);
    for (const auto& role : window) {
      const Segment& seg = layout.find_segment(role);
      const size_t hi = std::min(seg.end, q + 1);  // within-window causality
      for (size_t k = seg.begin; k < hi; ++k) mask.set(q, k);
    }
    mask.set(q, q);
  }
}

}  // namespace

AttentionMask build_mask(const MaskSpec& spec, const PromptLayout& layout) {
  check_layout_compat(spec, layout);
  const size_t n = layout.size();
  AttentionMask mask(n);

  switch (spec.method) {
    case MaskMethod::Regular:
    case MaskMethod::Rd:
      fill_lower_triangular(mask);
      break;

    case MaskMethod::FullAttnV1:
    case MaskMethod::FullAttnV2: {
      fill_lower_triangular(mask);
      // Demo -> later demo, whole segments.
      for (int i = 1; i <= spec.k; ++i) {
        const Segment& row = layout.find_segment(SegmentRole::orig(i));
        for (int j = i + 1; j <= spec.k; ++j) {
          const Segment& key = layout.find_segment(SegmentRole::orig(j));
          for (size_t q = row.begin; q < row.end; ++q)
            for (size_t k = key.begin; k < key.end; ++k) mask.set(q, k);
        }
        if (spec.method == MaskMethod::FullAttnV2) {
          const Segment& query = layout.find_segment(SegmentRole::query());
          for (size_t q = row.begin; q < row.end; ++q)
            for (size_t k = query.begin; k < query.end; ++k) mask.set(q, k);
        }
      }
      break;
    }

    case MaskMethod::RdScaNoSos:
    case MaskMethod::RdSca: {
      const bool sos_visible = spec.sos_policy == SosPolicy::AlwaysVisible;
      mask.set(0, 0);
      // Duplicate rows per policy: own segment always, earlier duplicate
      // segments only under CausalAmongDups.
      for (int i = 2; i <= spec.k; ++i) {
        const Segment& row = layout.find_segment(SegmentRole::dup(i));
        std::vector<SegmentRole> visible;
        if (spec.dup_policy == DupPolicy::CausalAmongDups) {
          for (int j = 2; j < i; ++j) visible.push_back(SegmentRole::dup(j));
        }
        visible.push_back(SegmentRole::dup(i));
        fill_window_rows(mask, layout, row, visible, sos_visible);
      }
      // Demonstration rows per window.
      for (int i = 1; i <= spec.k; ++i) {
        const Segment& row = layout.find_segment(SegmentRole::orig(i));
        fill_window_rows(mask, layout, row, demo_window(spec, i).segments, sos_visible);
      }
      // Query rows.
      const Segment& query = layout.find_segment(SegmentRole::query());
      fill_window_rows(mask, layout, query, query_window(spec).segments, sos_visible);
      break;
    }
  }

  mask.validate();
  return mask;
}

AttentionMask compose_mask_from_regions(const std::vector<Region>& regions,
                                        const PromptLayout& layout) {
  bool include[10] = {};
  include[static_cast<size_t>(Region::Self)] = true;
  for (Region r : regions) {
    if (r == Region::Self || r == Region::None)
      throw std::invalid_argument("compose_mask_from_regions: region set must be within R1..R8");
    include[static_cast<size_t>(r)] = true;
  }
  // Plain causal attention necessarily includes the start column; the
  // region lists for plain-layout methods leave it implicit.
  if (layout.variant == LayoutVariant::Plain) include[static_cast<size_t>(Region::R4)] = true;

  const size_t n = layout.size();
  AttentionMask mask(n);
  for (size_t q = 0; q < n; ++q) {
    for (size_t k = 0; k < n; ++k) {
      if (include[static_cast<size_t>(classify_region(layout, q, k))]) mask.set(q, k);
    }
  }
  mask.validate();
  return mask;
}

// ============================================================================
// Analyses
// ============================================================================

AttentionMask visibility_closure(const AttentionMask& mask) {
  const size_t n = mask.n();
  AttentionMask closure(n);
  // Iterative BFS per output position over visible-attention edges.
  std::vector<size_t> stack;
  std::vector<uint8_t> seen(n);
  for (size_t t = 0; t < n; ++t) {
    std::fill(seen.begin(), seen.end(), 0);
    stack.assign(1, t);
    seen[t] = 1;
    while (!stack.empty()) {
      const size_t v = stack.back();
      stack.pop_back();
      closure.set(t, v);
      for (size_t p : mask.visible_in_row(v)) {
        if (!seen[p]) {
          seen[p] = 1;
          stack.push_back(p);
        }
      }
    }
  }
  return closure;
}

std::vector<int> nshot_profile(const MaskSpec& spec, const PromptLayout& layout) {
  check_layout_compat(spec, layout);
  const AttentionMask mask = build_mask(spec, layout);
  const size_t n = layout.size();

  // Content identity of each position: demo number for DUP/ORIG, else 0.
  std::vector<int> content(n, 0);
  for (const auto& seg : layout.segments) {
    if (!seg.role.is_demo()) continue;
    for (size_t p = seg.begin; p < seg.end; ++p) content[p] = seg.role.index;
  }

  auto distinct_other = [&](const Segment& seg, int own) {
    std::vector<uint8_t> seen(static_cast<size_t>(layout.k) + 1, 0);
    int count = 0;
    for (size_t q = seg.begin; q < seg.end; ++q) {
      for (size_t k : mask.visible_in_row(q)) {
        const int c = content[k];
        if (c != 0 && c != own && !seen[static_cast<size_t>(c)]) {
          seen[static_cast<size_t>(c)] = 1;
          ++count;
        }
      }
    }
    return count;
  };

  std::vector<int> profile;
  profile.reserve(static_cast<size_t>(layout.k) + 1);
  for (int i = 1; i <= layout.k; ++i) {
    profile.push_back(distinct_other(layout.find_segment(SegmentRole::orig(i)), i));
  }
  profile.push_back(distinct_other(layout.find_segment(SegmentRole::query()), 0));
  return profile;
}

std::string nshot_to_string(const std::vector<int>& profile) {
  std::string out;
  for (size_t i = 0; i < profile.size(); ++i) {
    if (i) out += '-';
    out += std::to_string(profile[i]);
  }
  return out;
}

}  // namespace slidemask
