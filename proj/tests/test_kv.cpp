// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "slidemask/errors.hpp"
#include "slidemask/kv_cache.hpp"
#include "slidemask/rng.hpp"

using namespace slidemask;

namespace {

ModelConfig kv_config(PositionMode mode, int layers, uint64_t seed) {
  ModelConfig c;
  c.vocab_size = 16;
  c.d_model = 12;
  c.n_heads = 2;
  c.n_layers = layers;
  c.d_ff = 24;
  c.position_mode = mode;
  c.seed = seed;
  c.max_positions = 128;
  return c;
}

/// Synthetic layout with duplicate-faithful random tokens.
std::pair<PromptLayout, std::vector<Demonstration>> random_prompt(Rng& rng, int k,
                                                                  size_t demo_len,
                                                                  size_t query_len,
                                                                  bool repeated, int vocab) {
  std::vector<Demonstration> demos;
  for (int i = 0; i < k; ++i) {
    Demonstration d;
    for (size_t t = 0; t + 1 < demo_len; ++t)
      d.input_tokens.push_back(static_cast<int>(2 + rng.next_below(vocab - 2)));
    if (d.input_tokens.empty()) d.input_tokens.push_back(static_cast<int>(2 + rng.next_below(vocab - 2)));
    d.label_id = static_cast<int>(2 + rng.next_below(vocab - 2));
    demos.push_back(std::move(d));
  }
  QueryInput query;
  for (size_t t = 0; t < query_len; ++t)
    query.tokens.push_back(static_cast<int>(2 + rng.next_below(vocab - 2)));
  PromptLayout layout =
      repeated ? build_repeated_layout(demos, query) : build_plain_layout(demos, query);
  return {std::move(layout), std::move(demos)};
}

double max_query_deviation(const ModelState& model, const PromptLayout& layout,
                           const MaskSpec& spec, PositionPolicy policy,
                           RetentionPolicy retention) {
  const AttentionMask mask = build_mask(spec, layout);
  const std::vector<int> positions = assign_positions(policy, spec, layout);
  const ForwardTrace mono = forward(model, layout.tokens, mask, positions);
  PrefillResult pre = prefill(model, layout, mask, spec, positions, retention);
  const auto query_logits = decode_query(pre.cache, model, layout, mask, positions);
  const Segment& query = layout.find_segment(SegmentRole::query());
  double dev = 0.0;
  for (size_t qi = 0; qi < query_logits.size(); ++qi) {
    const auto row = mono.logits_at(query.begin + qi);
    for (size_t i = 0; i < query_logits[qi].size(); ++i)
      dev = std::max(dev, std::abs(row[i] - query_logits[qi][i]));
  }
  // Prefill's final-prefix logits must match the monolithic row as well.
  const auto prefix_row = mono.logits_at(pre.prefix_length - 1);
  for (size_t i = 0; i < pre.last_logits.size(); ++i)
    dev = std::max(dev, std::abs(prefix_row[i] - pre.last_logits[i]));
  return dev;
}

}  // namespace

TEST_CASE("prefill covers the prefix and applies the retention policy") {
  Rng rng(8);
  const ModelState model = init_model(kv_config(PositionMode::RelativeRotation, 2, 5));

  SUBCASE("regular plain layout caches every prefix position") {
    auto [layout, demos] = random_prompt(rng, 3, 3, 2, false, model.config.vocab_size);
    const MaskSpec spec = MaskSpec::regular(3);
    const AttentionMask mask = build_mask(spec, layout);
    PrefillResult pre = prefill(model, layout, mask, spec, absolute_positions(layout.size()),
                                RetentionPolicy::Full);
    CHECK(pre.cache.entries_per_layer() == layout.query_begin());
    const MemoryReport report = pre.cache.memory_report();
    CHECK(report.sos == 1);
    CHECK(report.dup == 0);
    CHECK(report.query == 0);
  }

  SUBCASE("window_only eviction drops every duplicate entry") {
    auto [layout, demos] = random_prompt(rng, 4, 2, 2, true, model.config.vocab_size);
    const MaskSpec spec = MaskSpec::rdsca(4, 4);
    const AttentionMask mask = build_mask(spec, layout);
    PrefillResult pre = prefill(model, layout, mask, spec, absolute_positions(layout.size()),
                                RetentionPolicy::WindowOnly);
    const MemoryReport report = pre.cache.memory_report();
    CHECK(report.dup == 0);
    CHECK(report.sos == 1);
    // Peak saw the duplicates before eviction.
    CHECK(report.peak_entries_per_layer == layout.query_begin());
    CHECK(pre.cache.entries_per_layer() < layout.query_begin());
    for (const auto& seg : layout.segments) {
      if (seg.role.kind == SegmentKind::Dup)
        CHECK_FALSE(pre.cache.has_position(static_cast<int>(seg.begin)));
    }
  }

  SUBCASE("K=0 prefix holds only the start token") {
    auto [layout, demos] = random_prompt(rng, 0, 2, 3, false, model.config.vocab_size);
    const MaskSpec spec = MaskSpec::regular(0);
    PrefillResult pre = prefill(model, layout, build_mask(spec, layout), spec,
                                absolute_positions(layout.size()), RetentionPolicy::Full);
    CHECK(pre.cache.entries_per_layer() == 1);
  }

  SUBCASE("non-causal specs are rejected") {
    auto [layout, demos] = random_prompt(rng, 2, 2, 2, false, model.config.vocab_size);
    const MaskSpec spec = MaskSpec::full_attn_v1(2);
    CHECK_THROWS_AS(prefill(model, layout, build_mask(spec, layout), spec,
                            absolute_positions(layout.size()), RetentionPolicy::Full),
                    std::invalid_argument);
  }
}

TEST_CASE("incremental decoding matches the monolithic forward") {
  Rng rng(99);
  for (PositionMode mode :
       {PositionMode::None, PositionMode::AbsoluteLearned, PositionMode::RelativeRotation}) {
    const ModelState model = init_model(kv_config(mode, 2, 100 + static_cast<uint64_t>(mode)));
    for (int trial = 0; trial < 6; ++trial) {
      const int k = static_cast<int>(rng.next_int(1, 4));
      const int w = static_cast<int>(rng.next_int(1, k));
      const bool windowed = rng.next_bool();
      const MaskSpec spec =
          windowed ? MaskSpec::rdsca(k, w,
                                     rng.next_bool() ? DupPolicy::IsolatedDups
                                                     : DupPolicy::CausalAmongDups)
                   : (rng.next_bool() ? MaskSpec::rd(k) : MaskSpec::regular(k));
      auto [layout, demos] =
          random_prompt(rng, k, static_cast<size_t>(rng.next_int(2, 3)),
                        static_cast<size_t>(rng.next_int(1, 3)),
                        method_uses_repeated_layout(spec.method), model.config.vocab_size);
      const PositionPolicy policy = (windowed && rng.next_bool()) ? PositionPolicy::WindowLocal
                                                                  : PositionPolicy::Absolute;
      const RetentionPolicy retention = windowed && spec.query_policy.all_demos
                                            ? RetentionPolicy::WindowOnly
                                            : RetentionPolicy::Full;
      const double dev = max_query_deviation(model, layout, spec, policy, retention);
      INFO("mode ", position_mode_name(mode), " spec ", spec.to_json());
      CHECK(dev <= 1e-5);
    }
  }
}

TEST_CASE("steps referencing evicted entries raise eviction errors") {
  Rng rng(12);
  const ModelState model = init_model(kv_config(PositionMode::None, 2, 77));
  auto [layout, demos] = random_prompt(rng, 3, 2, 2, true, model.config.vocab_size);
  const MaskSpec rd = MaskSpec::rd(3);  // lower-triangular: query rows reference duplicates
  const AttentionMask mask = build_mask(rd, layout);
  const auto positions = absolute_positions(layout.size());
  // Window-only retention under Rd evicts entries the query still needs.
  PrefillResult pre = prefill(model, layout, mask, rd, positions, RetentionPolicy::WindowOnly);
  CHECK_THROWS_AS(decode_query(pre.cache, model, layout, mask, positions), eviction_error);

  // Under rdsca the query windows never reference duplicates, so the same
  // retention policy decodes cleanly.
  const MaskSpec rdsca = MaskSpec::rdsca(3, 3);
  const AttentionMask rdsca_mask = build_mask(rdsca, layout);
  PrefillResult ok =
      prefill(model, layout, rdsca_mask, rdsca, positions, RetentionPolicy::WindowOnly);
  CHECK_NOTHROW(decode_query(ok.cache, model, layout, rdsca_mask, positions));
}

TEST_CASE("step validates its visible set") {
  const ModelState model = init_model(kv_config(PositionMode::None, 1, 3));
  KvCache cache(model.config, RetentionPolicy::Full);
  const std::vector<int> self{0};
  step(cache, model, Vocabulary::kSos, 0, 0, self);
  // Visible set must include the stepped position.
  KvCache cache2(model.config, RetentionPolicy::Full);
  const std::vector<int> missing_self{};
  CHECK_THROWS_AS(step(cache2, model, Vocabulary::kSos, 0, 0, missing_self),
                  std::invalid_argument);
  // Future references are rejected.
  const std::vector<int> future{0, 1, 7};
  CHECK_THROWS_AS(step(cache, model, 4, 1, 1, future), std::invalid_argument);
}

TEST_CASE("memory parity: windowed retention matches the plain baseline") {
  Rng rng(2025);
  const ModelState model = init_model(kv_config(PositionMode::RelativeRotation, 2, 9));
  for (int k = 1; k <= 8; ++k) {
    const size_t demo_len = static_cast<size_t>(rng.next_int(1, 4));
    const size_t query_len = static_cast<size_t>(rng.next_int(1, 3));
    auto [repeated, demos] =
        random_prompt(rng, k, demo_len, query_len, true, model.config.vocab_size);
    const MaskSpec rdsca = MaskSpec::rdsca(k, k);
    PrefillResult windowed =
        prefill(model, repeated, build_mask(rdsca, repeated), rdsca,
                absolute_positions(repeated.size()), RetentionPolicy::WindowOnly);

    const Segment& qseg = repeated.find_segment(SegmentRole::query());
    QueryInput same_query;
    same_query.tokens.assign(repeated.tokens.begin() + static_cast<long>(qseg.begin),
                             repeated.tokens.begin() + static_cast<long>(qseg.end));
    const PromptLayout plain = build_plain_layout(demos, same_query);
    const MaskSpec regular = MaskSpec::regular(k);
    PrefillResult baseline =
        prefill(model, plain, build_mask(regular, plain), regular,
                absolute_positions(plain.size()), RetentionPolicy::Full);

    CHECK(windowed.cache.memory_report().total() == baseline.cache.memory_report().total());
    // Full retention on the repeated layout keeps every prefix entry.
    PrefillResult full = prefill(model, repeated, build_mask(rdsca, repeated), rdsca,
                                 absolute_positions(repeated.size()), RetentionPolicy::Full);
    CHECK(full.cache.entries_per_layer() == repeated.query_begin());
    if (k == 1) CHECK(windowed.cache.memory_report().total() ==
                      full.cache.memory_report().total());
  }
}

TEST_CASE("demo store: reuse, collisions, and query serving") {
  Rng rng(55);
  const ModelState model = init_model(kv_config(PositionMode::None, 2, 303));
  auto [layout, demos] = random_prompt(rng, 3, 3, 2, true, model.config.vocab_size);
  const MaskSpec spec = MaskSpec::rdsca(3, 3, DupPolicy::IsolatedDups);
  DemoStore store;

  const DemoStoreEntry& entry =
      store.precompute_demos(model, demos, spec, PositionPolicy::Absolute);
  CHECK(store.size() == 1);
  CHECK(entry.fingerprint == demo_set_fingerprint(demos, spec, PositionPolicy::Absolute));

  // Same demo set, two different queries: one store entry, both match the
  // monolithic masked forward.
  for (int q = 0; q < 2; ++q) {
    QueryInput query;
    const size_t qlen = static_cast<size_t>(rng.next_int(1, 3));
    for (size_t t = 0; t < qlen; ++t)
      query.tokens.push_back(static_cast<int>(2 + rng.next_below(model.config.vocab_size - 2)));
    const auto served = serve_query(entry, model, demos, query);

    const PromptLayout full_layout = build_repeated_layout(demos, query);
    const AttentionMask mask = build_mask(spec, full_layout);
    const ForwardTrace mono =
        forward(model, full_layout.tokens, mask, absolute_positions(full_layout.size()));
    const Segment& qseg = full_layout.find_segment(SegmentRole::query());
    for (size_t qi = 0; qi < served.size(); ++qi) {
      const auto row = mono.logits_at(qseg.begin + qi);
      for (size_t i = 0; i < served[qi].size(); ++i)
        CHECK(std::abs(row[i] - served[qi][i]) <= 1e-5);
    }
  }
  CHECK(store.size() == 1);

  // Changing one demo token changes the fingerprint (cache miss).
  auto altered = demos;
  altered[0].input_tokens[0] = altered[0].input_tokens[0] == 2 ? 3 : 2;
  CHECK(demo_set_fingerprint(altered, spec, PositionPolicy::Absolute) != entry.fingerprint);
  store.precompute_demos(model, altered, spec, PositionPolicy::Absolute);
  CHECK(store.size() == 2);

  // Non-windowed specs are rejected.
  CHECK_THROWS_AS(store.precompute_demos(model, demos, MaskSpec::rd(3),
                                         PositionPolicy::Absolute),
                  std::invalid_argument);

  // Serving with a mismatched demo set is rejected loudly.
  QueryInput query{{4, 5}, 0};
  CHECK_THROWS_AS(serve_query(entry, model, altered, query), std::invalid_argument);
}

TEST_CASE("store built from standalone window forwards matches (single layer, isolated)") {
  // Alternative construction route for the stored K/V: run [SOS] + window
  // tokens standalone and take the ORIG rows. Exact at depth one for the
  // same reason as the per-window equivalence oracle.
  Rng rng(91);
  ModelConfig config = kv_config(PositionMode::None, 1, 404);
  const ModelState model = init_model(config);
  auto [layout, demos] = random_prompt(rng, 3, 2, 1, true, model.config.vocab_size);
  const MaskSpec spec = MaskSpec::rdsca(3, 3, DupPolicy::IsolatedDups);

  DemoStore store;
  const DemoStoreEntry& entry =
      store.precompute_demos(model, demos, spec, PositionPolicy::Absolute);

  for (int i = 1; i <= 3; ++i) {
    const Segment& orig = layout.find_segment(SegmentRole::orig(i));
    std::vector<int> standalone{Vocabulary::kSos};
    size_t own_offset = 0;
    for (const auto& role : demo_window(spec, i).segments) {
      const Segment& ws = layout.find_segment(role);
      if (role == orig.role) own_offset = standalone.size();
      for (size_t p = ws.begin; p < ws.end; ++p) standalone.push_back(layout.tokens[p]);
    }
    // Standalone plain-causal prefill yields the same K/V for ORIG tokens.
    AttentionMask causal(standalone.size());
    for (size_t q = 0; q < standalone.size(); ++q)
      for (size_t c = 0; c <= q; ++c) causal.set(q, c);
    KvCache cache(model.config, RetentionPolicy::Full);
    for (size_t p = 0; p < standalone.size(); ++p) {
      std::vector<int> visible;
      for (size_t c = 0; c <= p; ++c) visible.push_back(static_cast<int>(c));
      step(cache, model, standalone[p], static_cast<int>(p), static_cast<int>(p), visible);
    }
    for (size_t off = 0; off < orig.length(); ++off) {
      const KvEntry& stored = [&]() -> const KvEntry& {
        for (const auto& e : entry.layers[0])
          if (e.position == static_cast<int>(orig.begin + off)) return e;
        throw std::runtime_error("stored entry missing");
      }();
      const KvEntry& alone = cache.entry(0, static_cast<int>(own_offset + off));
      for (size_t ksz = 0; ksz < stored.key.size(); ++ksz) {
        CHECK(std::abs(stored.key[ksz] - alone.key[ksz]) <= 1e-5);
        CHECK(std::abs(stored.value[ksz] - alone.value[ksz]) <= 1e-5);
      }
    }
  }
}

TEST_CASE("demo store persistence round-trips and rejects mismatches") {
  Rng rng(5150);
  const ModelState model = init_model(kv_config(PositionMode::None, 2, 11));
  auto [layout, demos] = random_prompt(rng, 2, 2, 1, true, model.config.vocab_size);
  const MaskSpec spec = MaskSpec::rdsca(2, 2);
  DemoStore store;
  const DemoStoreEntry& entry =
      store.precompute_demos(model, demos, spec, PositionPolicy::Absolute);
  const std::string path = "/tmp/slidemask_test_store.bin";
  store.save_entry(entry.fingerprint, path);

  DemoStore fresh;
  const uint64_t fp = fresh.load_entry(path, model.config);
  CHECK(fp == entry.fingerprint);
  const DemoStoreEntry* loaded = fresh.find(fp);
  REQUIRE(loaded != nullptr);
  CHECK(loaded->layers[0].size() == entry.layers[0].size());
  CHECK(loaded->layers[0][0].key == entry.layers[0][0].key);

  // Loading against a different model config fails loudly.
  ModelConfig other = model.config;
  other.d_model = 24;
  other.d_ff = 48;
  DemoStore wrong;
  CHECK_THROWS_AS(wrong.load_entry(path, other), std::runtime_error);
  std::filesystem::remove(path);
}
