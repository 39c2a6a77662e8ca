// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#include <numeric>
#include <set>
#include <stdexcept>

#include "doctest.h"
#include "slidemask/mask.hpp"
#include "slidemask/rng.hpp"

using namespace slidemask;

namespace {

// ---------------------------------------------------------------------------
// Independent oracle for windowed masks. The implementation walks segment
// role lists; this oracle works on contiguous token ranges instead: each
// row's window is the token interval [first window segment .. own segment
// end), visibility = inside the interval and causal, plus the start column
// per policy. Agreement of the two routes is the test.
// ---------------------------------------------------------------------------

struct RangeOracle {
  const PromptLayout& layout;
  const MaskSpec& spec;

  // Token interval of the W consecutive demo segments ending at ORIG(i).
  std::pair<size_t, size_t> demo_range(int i) const {
    // Candidate segments in order: DUP(i+1..K), ORIG(1..i) are contiguous in
    // the token stream; the window is the last W of them.
    std::vector<const Segment*> segs;
    for (int j = i + 1; j <= spec.k; ++j)
      segs.push_back(&layout.find_segment(SegmentRole::dup(j)));
    for (int j = 1; j <= i; ++j) segs.push_back(&layout.find_segment(SegmentRole::orig(j)));
    const size_t w = static_cast<size_t>(spec.window_w);
    return {segs[segs.size() - w]->begin, segs.back()->end};
  }

  std::pair<size_t, size_t> query_range() const {
    const int first = spec.query_policy.all_demos ? 1 : spec.k - spec.query_policy.last_n + 1;
    return {layout.find_segment(SegmentRole::orig(first)).begin,
            layout.find_segment(SegmentRole::query()).end};
  }

  bool visible(size_t q, size_t k) const {
    const bool sos_ok = spec.sos_policy == SosPolicy::AlwaysVisible;
    if (q == 0) return k == 0;
    const SegmentRole role = layout.role_at(q);
    const Segment& own = layout.segment_at(q);
    if (k == 0) return sos_ok;
    if (k > q) return false;
    size_t lo = 0, hi = 0;
    switch (role.kind) {
      case SegmentKind::Dup:
        lo = spec.dup_policy == DupPolicy::CausalAmongDups
                 ? layout.find_segment(SegmentRole::dup(2)).begin
                 : own.begin;
        hi = own.end;
        break;
      case SegmentKind::Orig: {
        auto [a, b] = demo_range(role.index);
        lo = a;
        hi = b;
        break;
      }
      case SegmentKind::Query: {
        auto [a, b] = query_range();
        lo = a;
        hi = b;
        break;
      }
      case SegmentKind::Sos:
        return false;  // handled above
    }
    return k >= lo && k < hi;
  }
};

AttentionMask oracle_mask(const PromptLayout& layout, const MaskSpec& spec) {
  AttentionMask m(layout.size());
  for (size_t q = 0; q < layout.size(); ++q)
    for (size_t k = 0; k < layout.size(); ++k)
      if (RangeOracle{layout, spec}.visible(q, k)) m.set(q, k);
  return m;
}

std::vector<std::string> window_names(const DemoWindow& w) {
  std::vector<std::string> names;
  for (const auto& role : w.segments) names.push_back(role_name(role));
  return names;
}

std::set<size_t> row_set(const AttentionMask& m, size_t q) {
  const auto row = m.visible_in_row(q);
  return {row.begin(), row.end()};
}

PromptLayout random_layout(Rng& rng, LayoutVariant variant, int k) {
  // synthetic_layout uses uniform spans; vary lengths by building directly
  // through the random-span constructor below.
  (void)rng;
  return synthetic_layout(variant, k, 1, 1);
}

/// Random segment lengths in [1..5] per demonstration, query in [1..5].
PromptLayout random_span_layout(Rng& rng, LayoutVariant variant, int k) {
  std::vector<Demonstration> demos;
  for (int i = 0; i < k; ++i) {
    Demonstration d;
    const auto len = static_cast<size_t>(rng.next_int(1, 4));
    for (size_t t = 0; t < len; ++t)
      d.input_tokens.push_back(static_cast<int>(2 + rng.next_below(20)));
    d.label_id = static_cast<int>(2 + rng.next_below(20));
    demos.push_back(std::move(d));
  }
  QueryInput query;
  const auto qlen = static_cast<size_t>(rng.next_int(1, 5));
  for (size_t t = 0; t < qlen; ++t)
    query.tokens.push_back(static_cast<int>(2 + rng.next_below(20)));
  if (variant == LayoutVariant::Plain) return build_plain_layout(demos, query);
  return build_repeated_layout(demos, query);
}

const std::vector<std::pair<MaskMethod, std::vector<Region>>>& method_region_rows() {
  static const std::vector<std::pair<MaskMethod, std::vector<Region>>> rows = {
      {MaskMethod::Regular, {Region::R1, Region::R2}},
      {MaskMethod::FullAttnV1, {Region::R1, Region::R2, Region::R6}},
      {MaskMethod::FullAttnV2, {Region::R1, Region::R2, Region::R6, Region::R7}},
      {MaskMethod::Rd, {Region::R1, Region::R2, Region::R3, Region::R4, Region::R5}},
      {MaskMethod::RdScaNoSos, {Region::R1, Region::R2, Region::R3}},
      {MaskMethod::RdSca, {Region::R1, Region::R2, Region::R3, Region::R4}},
  };
  return rows;
}

MaskSpec default_spec(MaskMethod method, int k) {
  switch (method) {
    case MaskMethod::Regular:
      return MaskSpec::regular(k);
    case MaskMethod::FullAttnV1:
      return MaskSpec::full_attn_v1(k);
    case MaskMethod::FullAttnV2:
      return MaskSpec::full_attn_v2(k);
    case MaskMethod::Rd:
      return MaskSpec::rd(k);
    case MaskMethod::RdScaNoSos:
      return MaskSpec::rdsca_no_sos(k, k);
    case MaskMethod::RdSca:
      return MaskSpec::rdsca(k, k);
  }
  throw std::logic_error("unreachable");
}

}  // namespace

TEST_CASE("demo windows match the sliding definition") {
  const MaskSpec spec = MaskSpec::rdsca(4, 4);
  CHECK(window_names(demo_window(spec, 1)) ==
        std::vector<std::string>{"DUP2", "DUP3", "DUP4", "ORIG1"});
  CHECK(window_names(demo_window(spec, 2)) ==
        std::vector<std::string>{"DUP3", "DUP4", "ORIG1", "ORIG2"});
  CHECK(window_names(demo_window(spec, 4)) ==
        std::vector<std::string>{"ORIG1", "ORIG2", "ORIG3", "ORIG4"});
  CHECK(demo_window(spec, 1).sos_visible);

  // W=1: each demonstration attends only itself (zero-shot windows).
  const MaskSpec w1 = MaskSpec::rdsca(4, 1);
  CHECK(window_names(demo_window(w1, 2)) == std::vector<std::string>{"ORIG2"});

  // W=2, i=1: suffix of [DUP2,DUP3,DUP4,ORIG1] covering two segments.
  const MaskSpec w2 = MaskSpec::rdsca(4, 2);
  CHECK(window_names(demo_window(w2, 1)) == std::vector<std::string>{"DUP4", "ORIG1"});

  CHECK_THROWS_AS(demo_window(spec, 0), std::invalid_argument);
  CHECK_THROWS_AS(demo_window(spec, 5), std::invalid_argument);
  CHECK_THROWS_AS(demo_window(MaskSpec::rd(4), 1), std::invalid_argument);
  CHECK_THROWS_AS(MaskSpec::rdsca(4, 5), std::invalid_argument);
  CHECK_THROWS_AS(MaskSpec::rdsca(4, 0), std::invalid_argument);
}

TEST_CASE("query windows follow the query policy") {
  CHECK(window_names(query_window(MaskSpec::rdsca(4, 4))) ==
        std::vector<std::string>{"ORIG1", "ORIG2", "ORIG3", "ORIG4", "QUERY"});
  CHECK(window_names(query_window(MaskSpec::rdsca(
            4, 4, DupPolicy::CausalAmongDups, QueryPolicy::last(3)))) ==
        std::vector<std::string>{"ORIG2", "ORIG3", "ORIG4", "QUERY"});
  CHECK(window_names(query_window(MaskSpec::rdsca(1, 1))) ==
        std::vector<std::string>{"ORIG1", "QUERY"});
  CHECK_THROWS_AS(MaskSpec::rdsca(4, 4, DupPolicy::CausalAmongDups, QueryPolicy::last(5)),
                  std::invalid_argument);
}

TEST_CASE("tiny rdsca mask matches the hand-derived visible sets") {
  // positions: 0=SOS, 1=DUP2, 2=ORIG1, 3=ORIG2, 4=QUERY
  const PromptLayout layout = synthetic_layout(LayoutVariant::Repeated, 2, 1, 1);
  const AttentionMask rdsca = build_mask(MaskSpec::rdsca(2, 2), layout);
  CHECK(row_set(rdsca, 1) == std::set<size_t>{0, 1});
  CHECK(row_set(rdsca, 2) == std::set<size_t>{0, 1, 2});
  CHECK(row_set(rdsca, 3) == std::set<size_t>{0, 2, 3});  // own duplicate excluded
  CHECK(row_set(rdsca, 4) == std::set<size_t>{0, 2, 3, 4});

  const AttentionMask rd = build_mask(MaskSpec::rd(2), layout);
  CHECK(row_set(rd, 3) == std::set<size_t>{0, 1, 2, 3});  // includes the redundant cell
  const auto diff = rd.difference(rdsca);
  REQUIRE(diff.size() == 2);
  CHECK(diff[0] == std::pair<size_t, size_t>{3, 1});
  CHECK(classify_region(layout, 3, 1) == Region::R5);
  CHECK(diff[1] == std::pair<size_t, size_t>{4, 1});  // query -> dup is redundant too
  CHECK(classify_region(layout, 4, 1) == Region::R5);
}

TEST_CASE("regular mask is exactly lower-triangular") {
  for (int k : {0, 1, 3}) {
    const PromptLayout layout = synthetic_layout(LayoutVariant::Plain, k, 2, 2);
    const AttentionMask mask = build_mask(MaskSpec::regular(k), layout);
    for (size_t q = 0; q < layout.size(); ++q)
      for (size_t c = 0; c < layout.size(); ++c) CHECK(mask.at(q, c) == (c <= q));
  }
}

TEST_CASE("windowed masks agree with the contiguous-range oracle") {
  Rng rng(99);
  for (int trial = 0; trial < 120; ++trial) {
    const int k = static_cast<int>(rng.next_int(1, 5));
    const int w = static_cast<int>(rng.next_int(1, k));
    const bool no_sos = rng.next_bool();
    const DupPolicy dup = rng.next_bool() ? DupPolicy::CausalAmongDups : DupPolicy::IsolatedDups;
    const QueryPolicy query = rng.next_bool()
                                  ? QueryPolicy::all()
                                  : QueryPolicy::last(static_cast<int>(rng.next_int(1, k)));
    const MaskSpec spec = no_sos ? MaskSpec::rdsca_no_sos(k, w, dup, query)
                                 : MaskSpec::rdsca(k, w, dup, query);
    const PromptLayout layout = random_span_layout(rng, LayoutVariant::Repeated, k);
    CHECK(build_mask(spec, layout) == oracle_mask(layout, spec));
  }
}

TEST_CASE("region classification matches the taxonomy") {
  const PromptLayout layout = synthetic_layout(LayoutVariant::Repeated, 3, 2, 2);
  const Segment& query = layout.find_segment(SegmentRole::query());
  const Segment& orig1 = layout.find_segment(SegmentRole::orig(1));
  const Segment& orig2 = layout.find_segment(SegmentRole::orig(2));
  const Segment& dup2 = layout.find_segment(SegmentRole::dup(2));
  const Segment& dup3 = layout.find_segment(SegmentRole::dup(3));

  CHECK(classify_region(layout, query.begin, orig1.begin) == Region::R1);
  CHECK(classify_region(layout, query.begin + 1, 0) == Region::R4);
  CHECK(classify_region(layout, orig2.begin, orig1.begin) == Region::R2);
  CHECK(classify_region(layout, orig2.begin, dup2.begin) == Region::R5);   // j <= i
  CHECK(classify_region(layout, orig2.begin, dup3.begin) == Region::R3);   // j > i
  CHECK(classify_region(layout, query.begin, dup3.begin) == Region::R5);
  CHECK(classify_region(layout, dup3.begin, dup2.begin) == Region::R3);
  CHECK(classify_region(layout, orig1.begin, orig2.begin) == Region::R6);
  CHECK(classify_region(layout, dup2.begin, orig2.begin) == Region::R6);
  CHECK(classify_region(layout, orig1.begin, query.begin) == Region::R7);
  CHECK(classify_region(layout, 0, 1) == Region::R8);
  CHECK(classify_region(layout, 0, 0) == Region::Self);
  CHECK(classify_region(layout, orig1.begin + 1, orig1.begin) == Region::Self);
  CHECK(classify_region(layout, orig1.begin, orig1.begin + 1) == Region::None);
}

TEST_CASE("region taxonomy partitions every cell") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = static_cast<int>(rng.next_int(1, 5));
    const auto variant = rng.next_bool() ? LayoutVariant::Repeated : LayoutVariant::Plain;
    const PromptLayout layout = random_span_layout(rng, variant, k);
    const auto counts = region_counts(layout);
    const size_t total = std::accumulate(counts.begin(), counts.end(), size_t{0});
    CHECK(total == layout.size() * layout.size());
  }
}

TEST_CASE("build_mask equals compose_mask_from_regions for every method row") {
  Rng rng(501);
  for (const auto& [method, regions] : method_region_rows()) {
    for (int k = 1; k <= 5; ++k) {
      for (int trial = 0; trial < 8; ++trial) {
        const auto variant = method_uses_repeated_layout(method) ? LayoutVariant::Repeated
                                                                 : LayoutVariant::Plain;
        const PromptLayout layout = random_span_layout(rng, variant, k);
        const MaskSpec spec = default_spec(method, k);
        CHECK(build_mask(spec, layout) == compose_mask_from_regions(regions, layout));
      }
    }
  }
}

TEST_CASE("rd minus rdsca is exactly the redundant-context region") {
  Rng rng(777);
  for (int k = 1; k <= 6; ++k) {
    const PromptLayout layout = random_span_layout(rng, LayoutVariant::Repeated, k);
    const AttentionMask rd = build_mask(MaskSpec::rd(k), layout);
    const AttentionMask rdsca = build_mask(MaskSpec::rdsca(k, k), layout);
    CHECK(rdsca.subset_of(rd));
    for (size_t q = 0; q < layout.size(); ++q) {
      for (size_t c = 0; c < layout.size(); ++c) {
        const bool in_diff = rd.at(q, c) && !rdsca.at(q, c);
        const bool is_r5 = classify_region(layout, q, c) == Region::R5;
        CHECK(in_diff == is_r5);
      }
    }
  }
}

TEST_CASE("window masks grow monotonically in W") {
  Rng rng(4242);
  for (int trial = 0; trial < 10; ++trial) {
    const int k = static_cast<int>(rng.next_int(2, 6));
    const PromptLayout layout = random_span_layout(rng, LayoutVariant::Repeated, k);
    AttentionMask previous;
    for (int w = 1; w <= k; ++w) {
      const AttentionMask mask = build_mask(MaskSpec::rdsca(k, w), layout);
      if (w > 1) CHECK(previous.subset_of(mask));
      previous = mask;
    }
  }
}

TEST_CASE("causality: only full-attention methods open right-context cells") {
  Rng rng(8080);
  for (const auto& [method, regions] : method_region_rows()) {
    const int k = 3;
    const auto variant =
        method_uses_repeated_layout(method) ? LayoutVariant::Repeated : LayoutVariant::Plain;
    const PromptLayout layout = random_span_layout(rng, variant, k);
    const AttentionMask mask = build_mask(default_spec(method, k), layout);
    bool has_forward = false;
    for (size_t q = 0; q < layout.size(); ++q)
      for (size_t c = q + 1; c < layout.size(); ++c) has_forward |= mask.at(q, c);
    CHECK(has_forward == !method_is_causal(method));
    for (size_t q = 0; q < layout.size(); ++q) CHECK(mask.at(q, q));
  }
}

TEST_CASE("start-column policy controls column zero") {
  const PromptLayout layout = synthetic_layout(LayoutVariant::Repeated, 4, 2, 2);
  const AttentionMask with_sos = build_mask(MaskSpec::rdsca(4, 2), layout);
  for (size_t q = 0; q < layout.size(); ++q) CHECK(with_sos.at(q, 0));

  const AttentionMask without = build_mask(MaskSpec::rdsca_no_sos(4, 2), layout);
  for (size_t q = 1; q < layout.size(); ++q) {
    // Windows never span the start token, so column zero must be closed
    // whenever the policy does not pin it.
    CHECK_FALSE(without.at(q, 0));
  }
  CHECK(without.at(0, 0));
}

TEST_CASE("n-shot profiles reproduce the window table") {
  const PromptLayout layout = synthetic_layout(LayoutVariant::Repeated, 4, 2, 2);
  const PromptLayout plain = synthetic_layout(LayoutVariant::Plain, 4, 2, 2);

  CHECK(nshot_to_string(nshot_profile(MaskSpec::regular(4), plain)) == "0-1-2-3-4");
  CHECK(nshot_to_string(nshot_profile(MaskSpec::rdsca(4, 1), layout)) == "0-0-0-0-4");
  CHECK(nshot_to_string(nshot_profile(MaskSpec::rdsca(4, 2), layout)) == "1-1-1-1-4");
  CHECK(nshot_to_string(nshot_profile(MaskSpec::rdsca(4, 3), layout)) == "2-2-2-2-4");
  CHECK(nshot_to_string(nshot_profile(MaskSpec::rdsca(4, 4), layout)) == "3-3-3-3-4");
  CHECK(nshot_to_string(nshot_profile(MaskSpec::rdsca(
            4, 4, DupPolicy::CausalAmongDups, QueryPolicy::last(3)), layout)) == "3-3-3-3-3");

  // Property: regular profiles count the left context for every K.
  for (int k = 1; k <= 6; ++k) {
    const PromptLayout p = synthetic_layout(LayoutVariant::Plain, k, 1, 1);
    std::vector<int> expected;
    for (int i = 0; i < k; ++i) expected.push_back(i);
    expected.push_back(k);
    CHECK(nshot_profile(MaskSpec::regular(k), p) == expected);
  }
}

TEST_CASE("visibility closure follows chained attention edges") {
  SUBCASE("regular closure equals the mask") {
    const PromptLayout layout = synthetic_layout(LayoutVariant::Plain, 2, 2, 1);
    const AttentionMask mask = build_mask(MaskSpec::regular(2), layout);
    CHECK(visibility_closure(mask) == mask);
  }
  SUBCASE("second-order path through an isolated duplicate") {
    // ORIG2 does not see DUP2 directly, but reaches it through ORIG1.
    const PromptLayout layout = synthetic_layout(LayoutVariant::Repeated, 2, 1, 1);
    const AttentionMask mask =
        build_mask(MaskSpec::rdsca(2, 2, DupPolicy::IsolatedDups), layout);
    CHECK(row_set(mask, 3) == std::set<size_t>{0, 2, 3});
    const AttentionMask closure = visibility_closure(mask);
    CHECK(row_set(closure, 3) == std::set<size_t>{0, 1, 2, 3});
  }
  SUBCASE("W=1 closure of a demonstration stays within itself plus start") {
    const PromptLayout layout = synthetic_layout(LayoutVariant::Repeated, 3, 2, 1);
    const AttentionMask mask =
        build_mask(MaskSpec::rdsca(3, 1, DupPolicy::IsolatedDups), layout);
    const AttentionMask closure = visibility_closure(mask);
    for (int i = 1; i <= 3; ++i) {
      const Segment& seg = layout.find_segment(SegmentRole::orig(i));
      std::set<size_t> expected{0};
      for (size_t p = seg.begin; p < seg.end; ++p) expected.insert(p);
      CHECK(row_set(closure, seg.end - 1) == expected);
    }
  }
  SUBCASE("closure against a brute-force matrix power oracle") {
    Rng rng(606);
    for (int trial = 0; trial < 10; ++trial) {
      const int k = static_cast<int>(rng.next_int(1, 4));
      const PromptLayout layout = random_span_layout(rng, LayoutVariant::Repeated, k);
      const MaskSpec spec = MaskSpec::rdsca(k, static_cast<int>(rng.next_int(1, k)),
                                            rng.next_bool() ? DupPolicy::CausalAmongDups
                                                            : DupPolicy::IsolatedDups);
      const AttentionMask mask = build_mask(spec, layout);
      // Warshall-style reachability as an independent route.
      const size_t n = mask.n();
      std::vector<std::vector<bool>> reach(n, std::vector<bool>(n, false));
      for (size_t q = 0; q < n; ++q)
        for (size_t c = 0; c < n; ++c) reach[q][c] = mask.at(q, c);
      for (size_t mid = 0; mid < n; ++mid)
        for (size_t q = 0; q < n; ++q)
          if (reach[q][mid])
            for (size_t c = 0; c < n; ++c)
              if (reach[mid][c]) reach[q][c] = true;
      const AttentionMask closure = visibility_closure(mask);
      for (size_t q = 0; q < n; ++q)
        for (size_t c = 0; c < n; ++c) CHECK(closure.at(q, c) == reach[q][c]);
    }
  }
}

TEST_CASE("rdsca with K=1 degenerates to plain causal attention") {
  const PromptLayout layout = synthetic_layout(LayoutVariant::Repeated, 1, 3, 2);
  const AttentionMask mask = build_mask(MaskSpec::rdsca(1, 1), layout);
  for (size_t q = 0; q < layout.size(); ++q)
    for (size_t c = 0; c < layout.size(); ++c) CHECK(mask.at(q, c) == (c <= q));
}

TEST_CASE("mask validation and spec serialization") {
  AttentionMask broken(3);
  broken.set(0, 0);
  broken.set(2, 2);
  CHECK_THROWS_AS(broken.validate(), std::invalid_argument);  // row 1 empty

  const MaskSpec spec =
      MaskSpec::rdsca(4, 3, DupPolicy::IsolatedDups, QueryPolicy::last(2));
  const MaskSpec back = MaskSpec::from_json(spec.to_json());
  CHECK(back.method == spec.method);
  CHECK(back.window_w == spec.window_w);
  CHECK(back.dup_policy == spec.dup_policy);
  CHECK(back.query_policy == spec.query_policy);
  CHECK(back.fingerprint() == spec.fingerprint());

  // Method/policy couplings are enforced.
  MaskSpec bad = spec;
  bad.sos_policy = SosPolicy::WindowOnly;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK_THROWS_AS(MaskSpec::from_json(R"({"method":"rdsca","k":2,"window_w":2,)"
                                      R"("sos_policy":"window_only"})"),
                  std::invalid_argument);

  // Incompatible method/layout pairs are rejected.
  const PromptLayout plain = synthetic_layout(LayoutVariant::Plain, 2, 1, 1);
  const PromptLayout repeated = synthetic_layout(LayoutVariant::Repeated, 2, 1, 1);
  CHECK_THROWS_AS(build_mask(MaskSpec::rd(2), plain), std::invalid_argument);
  CHECK_THROWS_AS(build_mask(MaskSpec::regular(2), repeated), std::invalid_argument);
}
