// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#include "slidemask/kv_cache.hpp"

#include <algorithm>
#include <cstring>
#include <mutex>
#include <stdexcept>

#include "math_detail.hpp"
#include "slidemask/errors.hpp"
#include "slidemask/hash.hpp"
#include "slidemask/manifest.hpp"

namespace slidemask {

std::string retention_name(RetentionPolicy p) {
  return p == RetentionPolicy::Full ? "full" : "window_only";
}

RetentionPolicy retention_from_name(const std::string& name) {
  if (name == "full") return RetentionPolicy::Full;
  if (name == "window_only") return RetentionPolicy::WindowOnly;
  throw std::invalid_argument("unknown retention policy: " + name);
}

// ============================================================================
// KvCache
// ============================================================================

KvCache::KvCache(const ModelConfig& config, RetentionPolicy retention)
    : retention_(retention), layers_(static_cast<size_t>(config.n_layers)) {}

size_t KvCache::entries_per_layer() const { return layers_.empty() ? 0 : layers_[0].size(); }

bool KvCache::has_position(int position) const {
  if (layers_.empty()) return false;
  const auto& l0 = layers_[0];
  auto it = std::lower_bound(l0.begin(), l0.end(), position,
                             [](const KvEntry& e, int pos) { return e.position < pos; });
  return it != l0.end() && it->position == position;
}

const KvEntry& KvCache::entry(size_t layer, int position) const {
  const auto& entries = layers_.at(layer);
  auto it = std::lower_bound(entries.begin(), entries.end(), position,
                             [](const KvEntry& e, int pos) { return e.position < pos; });
  if (it == entries.end() || it->position != position)
    throw eviction_error("kv cache: position " + std::to_string(position) +
                         " is evicted or was never cached");
  return *it;
}

void KvCache::append(size_t layer, KvEntry entry) {
  auto& entries = layers_.at(layer);
  if (!entries.empty() && entries.back().position >= entry.position)
    throw std::invalid_argument("kv cache: entry positions must strictly increase");
  entries.push_back(std::move(entry));
  if (layer == 0) peak_ = std::max(peak_, entries.size());
}

void KvCache::evict_role(SegmentKind kind) {
  for (auto& entries : layers_) {
    std::erase_if(entries, [kind](const KvEntry& e) { return e.role.kind == kind; });
  }
}

void KvCache::note_peak() { peak_ = std::max(peak_, entries_per_layer()); }

MemoryReport KvCache::memory_report() const {
  MemoryReport report;
  report.peak_entries_per_layer = peak_;
  if (layers_.empty()) return report;
  for (const auto& e : layers_[0]) {
    switch (e.role.kind) {
      case SegmentKind::Sos:
        report.sos++;
        break;
      case SegmentKind::Dup:
        report.dup++;
        break;
      case SegmentKind::Orig:
        report.orig++;
        break;
      case SegmentKind::Query:
        report.query++;
        break;
    }
  }
  return report;
}

// ============================================================================
// Incremental step
// ============================================================================

namespace {

StepResult step_with_role(KvCache& cache, const ModelState& model, int token, int position,
                          int position_id, std::span<const int> visible_positions,
                          SegmentRole role) {
  const ModelConfig& cfg = model.config;
  const auto d = static_cast<size_t>(cfg.d_model);
  const auto nh = static_cast<size_t>(cfg.n_heads);
  const size_t dh = d / nh;
  const auto ff = static_cast<size_t>(cfg.d_ff);
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  if (token < 0 || token >= cfg.vocab_size)
    throw std::invalid_argument("step: token id out of vocabulary range");
  bool sees_self = false;
  for (int p : visible_positions) {
    if (p == position) sees_self = true;
    if (p > position)
      throw std::invalid_argument("step: visible set references a future position");
  }
  if (!sees_self) throw std::invalid_argument("step: visible set must include the new position");

  std::vector<double> h(d);
  const double* e = model.tok_emb.data() + static_cast<size_t>(token) * d;
  std::copy(e, e + d, h.begin());
  if (cfg.position_mode == PositionMode::AbsoluteLearned) {
    if (position_id < 0 || position_id >= cfg.max_positions)
      throw std::invalid_argument("step: position id exceeds max_positions");
    const double* p = model.pos_emb.data() + static_cast<size_t>(position_id) * d;
    for (size_t i = 0; i < d; ++i) h[i] += p[i];
  }

  std::vector<double> an(d), q(d), k(d), v(d), concat(d), tmp(d), fn(d), u(ff), g(ff), y(d);
  std::vector<double> alpha;
  for (size_t l = 0; l < static_cast<size_t>(cfg.n_layers); ++l) {
    const LayerParams& lp = model.layers[l];
    detail::rmsnorm(h, lp.attn_gain, an);
    detail::matvec(lp.wq, lp.bq, an, q);
    detail::matvec(lp.wk, lp.bk, an, k);
    detail::matvec(lp.wv, lp.bv, an, v);
    if (cfg.position_mode == PositionMode::RelativeRotation) {
      for (size_t hh = 0; hh < nh; ++hh) {
        detail::rope_rotate({q.data() + hh * dh, dh}, position_id);
        detail::rope_rotate({k.data() + hh * dh, dh}, position_id);
      }
    }
    KvEntry entry;
    entry.position = position;
    entry.role = role;
    entry.key = k;
    entry.value = v;
    cache.append(l, std::move(entry));

    // Resolve visible entries once per layer; missing entries are a hard
    // error, never a silent wrong answer.
    std::vector<const KvEntry*> visible;
    visible.reserve(visible_positions.size());
    for (int p : visible_positions) visible.push_back(&cache.entry(l, p));

    alpha.resize(visible.size());
    for (size_t hh = 0; hh < nh; ++hh) {
      detail::attention_row(
          {q.data() + hh * dh, dh}, visible.size(),
          [&](size_t idx) { return visible[idx]->key.data() + hh * dh; },
          [&](size_t idx) { return visible[idx]->value.data() + hh * dh; }, inv_sqrt_dh, alpha,
          {concat.data() + hh * dh, dh});
    }
    detail::matvec(lp.wo, lp.bo, concat, tmp);
    for (size_t i = 0; i < d; ++i) h[i] += tmp[i];
    detail::rmsnorm(h, lp.ffn_gain, fn);
    detail::matvec(lp.w1, lp.b1, fn, u);
    for (size_t i = 0; i < ff; ++i) g[i] = detail::gelu(u[i]);
    detail::matvec(lp.w2, lp.b2, g, y);
    for (size_t i = 0; i < d; ++i) h[i] += y[i];
  }

  StepResult result;
  result.logits.resize(static_cast<size_t>(cfg.vocab_size));
  detail::rmsnorm(h, model.final_gain, fn);
  detail::matvec(model.w_out, model.b_out, fn, result.logits);
  return result;
}

std::vector<int> row_as_ints(const AttentionMask& mask, size_t row) {
  std::vector<int> out;
  for (size_t p : mask.visible_in_row(row)) out.push_back(static_cast<int>(p));
  return out;
}

}  // namespace

StepResult step(KvCache& cache, const ModelState& model, int token, int position,
                int position_id, std::span<const int> visible_positions) {
  return step_with_role(cache, model, token, position, position_id, visible_positions,
                        SegmentRole::query());
}

PrefillResult prefill(const ModelState& model, const PromptLayout& layout,
                      const AttentionMask& mask, const MaskSpec& spec,
                      std::span<const int> position_ids, RetentionPolicy retention) {
  spec.validate();
  if (!method_is_causal(spec.method))
    throw std::invalid_argument("prefill: non-causal masks cannot be decoded incrementally");
  if (mask.n() != layout.size() || position_ids.size() != layout.size())
    throw std::invalid_argument("prefill: layout, mask and positions must agree in length");

  PrefillResult result;
  result.cache = KvCache(model.config, retention);
  result.prefix_length = layout.query_begin();
  for (size_t pos = 0; pos < result.prefix_length; ++pos) {
    const auto visible = row_as_ints(mask, pos);
    auto step_result =
        step_with_role(result.cache, model, layout.tokens[pos], static_cast<int>(pos),
                       position_ids[pos], visible, layout.role_at(pos));
    if (pos + 1 == result.prefix_length) result.last_logits = std::move(step_result.logits);
  }
  result.cache.note_peak();
  if (retention == RetentionPolicy::WindowOnly) result.cache.evict_role(SegmentKind::Dup);
  return result;
}

std::vector<std::vector<double>> decode_query(KvCache& cache, const ModelState& model,
                                              const PromptLayout& layout,
                                              const AttentionMask& mask,
                                              std::span<const int> position_ids) {
  const Segment& query = layout.find_segment(SegmentRole::query());
  std::vector<std::vector<double>> logits;
  logits.reserve(query.length());
  for (size_t pos = query.begin; pos < query.end; ++pos) {
    const auto visible = row_as_ints(mask, pos);
    auto step_result = step(cache, model, layout.tokens[pos], static_cast<int>(pos),
                            position_ids[pos], visible);
    logits.push_back(std::move(step_result.logits));
  }
  return logits;
}

// ============================================================================
// DemoStore
// ============================================================================

namespace {

QueryInput dummy_query() {
  QueryInput q;
  q.tokens = {Vocabulary::kUnk};
  q.template_id = 0;
  return q;
}

void check_rdsca_family(const MaskSpec& spec) {
  if (!method_is_windowed(spec.method))
    throw std::invalid_argument("precompute_demos: requires a windowed (rdsca-family) spec");
}

}  // namespace

std::string demo_set_canonical_key(std::span<const Demonstration> demos, const MaskSpec& spec,
                                   PositionPolicy policy) {
  std::string key = "demos:";
  for (const auto& d : demos) {
    for (int t : d.span_with_label()) {
      key += std::to_string(t);
      key += ',';
    }
    key += ';';
  }
  key += "|spec:" + spec.to_json();
  key += "|policy:" + position_policy_name(policy);
  return key;
}

uint64_t demo_set_fingerprint(std::span<const Demonstration> demos, const MaskSpec& spec,
                              PositionPolicy policy) {
  return hash_string(demo_set_canonical_key(demos, spec, policy));
}

const DemoStoreEntry& DemoStore::precompute_demos(const ModelState& model,
                                                  std::span<const Demonstration> demos,
                                                  const MaskSpec& spec, PositionPolicy policy) {
  check_rdsca_family(spec);
  const std::string key = demo_set_canonical_key(demos, spec, policy);
  const uint64_t fp = hash_string(key);
  {
    std::shared_lock lock(mutex_);
    auto it = entries_.find(fp);
    if (it != entries_.end()) {
      if (it->second.canonical_key != key)
        throw gate_error("demo store: fingerprint collision with differing content");
      return it->second;
    }
  }

  // The prefix (SOS + duplicates + originals) is query-independent: no
  // prefix row attends the query segment. A placeholder query satisfies the
  // layout invariants and is never fed.
  const PromptLayout layout = build_repeated_layout(demos, dummy_query());
  const AttentionMask mask = build_mask(spec, layout);
  const std::vector<int> positions = assign_positions(policy, spec, layout);
  PrefillResult pre = prefill(model, layout, mask, spec, positions, RetentionPolicy::WindowOnly);

  DemoStoreEntry entry;
  entry.fingerprint = fp;
  entry.canonical_key = key;
  entry.config = model.config;
  entry.position_policy = policy;
  entry.spec = spec;
  entry.prefix_length = pre.prefix_length;
  entry.last_logits = std::move(pre.last_logits);
  entry.layers.resize(static_cast<size_t>(model.config.n_layers));
  for (size_t l = 0; l < entry.layers.size(); ++l) {
    for (int p = 0; p < static_cast<int>(pre.prefix_length); ++p) {
      if (!pre.cache.has_position(p)) continue;  // evicted duplicate
      entry.layers[l].push_back(pre.cache.entry(l, p));
    }
  }

  std::unique_lock lock(mutex_);
  auto [it, inserted] = entries_.emplace(fp, std::move(entry));
  if (!inserted && it->second.canonical_key != key)
    throw gate_error("demo store: fingerprint collision with differing content");
  return it->second;
}

const DemoStoreEntry* DemoStore::find(uint64_t fingerprint) const {
  std::shared_lock lock(mutex_);
  auto it = entries_.find(fingerprint);
  return it == entries_.end() ? nullptr : &it->second;
}

size_t DemoStore::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

std::vector<std::vector<double>> serve_query(const DemoStoreEntry& entry,
                                             const ModelState& model,
                                             std::span<const Demonstration> demos,
                                             const QueryInput& query) {
  if (entry.config.to_json() != model.config.to_json())
    throw std::invalid_argument("serve_query: model config differs from the store entry");
  if (demo_set_canonical_key(demos, entry.spec, entry.position_policy) != entry.canonical_key)
    throw std::invalid_argument("serve_query: demo set does not match the store entry");

  const PromptLayout layout = build_repeated_layout(demos, query);
  const AttentionMask mask = build_mask(entry.spec, layout);
  const std::vector<int> positions = assign_positions(entry.position_policy, entry.spec, layout);

  KvCache cache(model.config, RetentionPolicy::WindowOnly);
  for (size_t l = 0; l < entry.layers.size(); ++l) {
    for (const auto& e : entry.layers[l]) cache.append(l, e);
  }
  return decode_query(cache, model, layout, mask, positions);
}

// ============================================================================
// Persistence
// ============================================================================

namespace {
constexpr char kStoreMagic[8] = {'S', 'M', 'D', 'S', 'T', 'R', '0', '1'};

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_str(std::string& out, const std::string& s) {
  put_u64(out, s.size());
  out += s;
}

void put_doubles(std::string& out, const std::vector<double>& v) {
  put_u64(out, v.size());
  const size_t offset = out.size();
  out.resize(offset + v.size() * sizeof(double));
  std::memcpy(out.data() + offset, v.data(), v.size() * sizeof(double));
}

uint64_t get_u64(const std::string& in, size_t& cursor) {
  if (cursor + 8 > in.size()) throw std::runtime_error("demo store file: truncated");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<uint64_t>(static_cast<unsigned char>(in[cursor + static_cast<size_t>(i)]))
         << (8 * i);
  cursor += 8;
  return v;
}

std::string get_str(const std::string& in, size_t& cursor) {
  const uint64_t len = get_u64(in, cursor);
  if (cursor + len > in.size()) throw std::runtime_error("demo store file: truncated string");
  std::string s = in.substr(cursor, len);
  cursor += len;
  return s;
}

std::vector<double> get_doubles(const std::string& in, size_t& cursor) {
  const uint64_t len = get_u64(in, cursor);
  if (cursor + len * sizeof(double) > in.size())
    throw std::runtime_error("demo store file: truncated tensor");
  std::vector<double> v(len);
  std::memcpy(v.data(), in.data() + cursor, len * sizeof(double));
  cursor += len * sizeof(double);
  return v;
}
}  // namespace

void DemoStore::save_entry(uint64_t fingerprint, const std::string& path) const {
  std::shared_lock lock(mutex_);
  auto it = entries_.find(fingerprint);
  if (it == entries_.end())
    throw std::invalid_argument("demo store: no entry with fingerprint " + hex64(fingerprint));
  const DemoStoreEntry& e = it->second;
  std::string out;
  out.append(kStoreMagic, 8);
  put_u64(out, e.fingerprint);
  put_str(out, e.canonical_key);
  put_str(out, e.config.to_json());
  put_str(out, position_policy_name(e.position_policy));
  put_str(out, e.spec.to_json());
  put_u64(out, e.prefix_length);
  put_doubles(out, e.last_logits);
  put_u64(out, e.layers.size());
  for (const auto& layer : e.layers) {
    put_u64(out, layer.size());
    for (const auto& kv : layer) {
      put_u64(out, static_cast<uint64_t>(kv.position));
      put_u64(out, static_cast<uint64_t>(kv.role.kind));
      put_u64(out, static_cast<uint64_t>(kv.role.index));
      put_doubles(out, kv.key);
      put_doubles(out, kv.value);
    }
  }
  write_file(path, out);
}

uint64_t DemoStore::load_entry(const std::string& path, const ModelConfig& expected_config) {
  const std::string in = read_file(path);
  if (in.size() < 8 || std::memcmp(in.data(), kStoreMagic, 8) != 0)
    throw std::runtime_error("demo store file: bad magic/version in " + path);
  size_t cursor = 8;
  DemoStoreEntry e;
  e.fingerprint = get_u64(in, cursor);
  e.canonical_key = get_str(in, cursor);
  const std::string config_json = get_str(in, cursor);
  if (config_json != expected_config.to_json())
    throw std::runtime_error("demo store file: model config mismatch, refusing to load " + path);
  e.config = ModelConfig::from_json(config_json);
  e.position_policy = position_policy_from_name(get_str(in, cursor));
  e.spec = MaskSpec::from_json(get_str(in, cursor));
  e.prefix_length = get_u64(in, cursor);
  e.last_logits = get_doubles(in, cursor);
  e.layers.resize(get_u64(in, cursor));
  for (auto& layer : e.layers) {
    const uint64_t count = get_u64(in, cursor);
    layer.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
      KvEntry kv;
      kv.position = static_cast<int>(get_u64(in, cursor));
      kv.role.kind = static_cast<SegmentKind>(get_u64(in, cursor));
      kv.role.index = static_cast<int>(get_u64(in, cursor));
      kv.key = get_doubles(in, cursor);
      kv.value = get_doubles(in, cursor);
      layer.push_back(std::move(kv));
    }
  }
  if (hash_string(e.canonical_key) != e.fingerprint)
    throw std::runtime_error("demo store file: fingerprint does not match content");

  std::unique_lock lock(mutex_);
  const uint64_t fp = e.fingerprint;
  auto it = entries_.find(fp);
  if (it != entries_.end() && it->second.canonical_key != e.canonical_key)
    throw gate_error("demo store: fingerprint collision with differing content");
  entries_.insert_or_assign(fp, std::move(e));
  return fp;
}

}  // namespace slidemask
