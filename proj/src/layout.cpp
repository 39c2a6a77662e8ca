// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#include "slidemask/layout.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

#include "json.hpp"
#include "slidemask/hash.hpp"

namespace slidemask {

std::string role_name(const SegmentRole& role) {
  switch (role.kind) {
    case SegmentKind::Sos:
      return "SOS";
    case SegmentKind::Dup:
      return "DUP" + std::to_string(role.index);
    case SegmentKind::Orig:
      return "ORIG" + std::to_string(role.index);
    case SegmentKind::Query:
      return "QUERY";
  }
  return "?";
}

void LabelMap::validate() const {
  if (label_ids.empty()) throw std::invalid_argument("LabelMap: empty label set");
  std::unordered_set<int> seen;
  for (int id : label_ids) {
    if (!seen.insert(id).second)
      throw std::invalid_argument("LabelMap: label token ids must be pairwise distinct");
  }
}

std::vector<int> Demonstration::span_with_label() const {
  std::vector<int> out = input_tokens;
  out.push_back(label_id);
  return out;
}

namespace {

struct TemplateDef {
  std::vector<std::string> prefix;
  std::vector<std::string> suffix;
};

const std::vector<TemplateDef>& template_table() {
  static const std::vector<TemplateDef> table = {
      {{"Input:"}, {"Label:"}},
      {{}, {"->"}},
      {{"Q:"}, {"A:"}},
  };
  return table;
}

}  // namespace

int template_count() { return static_cast<int>(template_table().size()); }

std::vector<int> render_template(const Vocabulary& vocab, int template_id,
                                 std::span<const std::string> input) {
  if (template_id < 0 || template_id >= template_count())
    throw std::invalid_argument("unknown template id " + std::to_string(template_id));
  if (input.empty()) throw std::invalid_argument("render_template: empty input");
  const TemplateDef& def = template_table()[static_cast<size_t>(template_id)];
  std::vector<int> out;
  out.reserve(def.prefix.size() + input.size() + def.suffix.size());
  for (const auto& word : def.prefix) out.push_back(vocab.id_of(word));
  for (const auto& word : input) out.push_back(vocab.id_of(word));
  for (const auto& word : def.suffix) out.push_back(vocab.id_of(word));
  return out;
}

Demonstration render_demonstration(const Vocabulary& vocab, const RawExample& x,
                                   const LabelMap& label_map, int template_id) {
  label_map.validate();
  if (x.class_index < 0 || x.class_index >= label_map.n_classes())
    throw std::invalid_argument("render_demonstration: label outside map");
  Demonstration d;
  d.input_tokens = render_template(vocab, template_id, x.input);
  d.label_id = label_map.label_ids[static_cast<size_t>(x.class_index)];
  d.template_id = template_id;
  return d;
}

QueryInput render_query(const Vocabulary& vocab, std::span<const std::string> input,
                        int template_id) {
  return QueryInput{render_template(vocab, template_id, input), template_id};
}

const Segment& PromptLayout::segment_at(size_t position) const {
  if (position >= tokens.size())
    throw std::out_of_range("PromptLayout::segment_at: position out of range");
  // Segments are sorted and cover [0, n): binary search on begin.
  auto it = std::upper_bound(segments.begin(), segments.end(), position,
                             [](size_t pos, const Segment& s) { return pos < s.begin; });
  return *std::prev(it);
}

SegmentRole PromptLayout::role_at(size_t position) const { return segment_at(position).role; }

const Segment& PromptLayout::find_segment(const SegmentRole& role) const {
  for (const auto& s : segments)
    if (s.role == role) return s;
  throw std::invalid_argument("PromptLayout: no segment with role " + role_name(role));
}

bool PromptLayout::has_segment(const SegmentRole& role) const {
  for (const auto& s : segments)
    if (s.role == role) return true;
  return false;
}

size_t PromptLayout::query_end_position() const {
  const Segment& q = find_segment(SegmentRole::query());
  return q.end - 1;
}

void PromptLayout::validate() const {
  if (segments.empty()) throw std::invalid_argument("PromptLayout: no segments");
  size_t cursor = 0;
  for (const auto& s : segments) {
    if (s.begin != cursor)
      throw std::invalid_argument("PromptLayout: segments must be contiguous from 0");
    if (s.end <= s.begin) throw std::invalid_argument("PromptLayout: empty segment");
    cursor = s.end;
  }
  if (cursor != tokens.size())
    throw std::invalid_argument("PromptLayout: segments must cover the token sequence");

  // Expected order: SOS, [DUP 2..K], ORIG 1..K, QUERY.
  std::vector<SegmentRole> expected;
  expected.push_back(SegmentRole::sos());
  if (variant == LayoutVariant::Repeated) {
    for (int i = 2; i <= k; ++i) expected.push_back(SegmentRole::dup(i));
  }
  for (int i = 1; i <= k; ++i) expected.push_back(SegmentRole::orig(i));
  expected.push_back(SegmentRole::query());
  if (segments.size() != expected.size())
    throw std::invalid_argument("PromptLayout: wrong segment count for variant");
  for (size_t i = 0; i < expected.size(); ++i) {
    if (!(segments[i].role == expected[i]))
      throw std::invalid_argument("PromptLayout: segment order violated at " +
                                  role_name(segments[i].role));
  }
  if (segments.front().length() != 1)
    throw std::invalid_argument("PromptLayout: SOS must be a single token");
  if (tokens.front() != Vocabulary::kSos)
    throw std::invalid_argument("PromptLayout: position 0 must hold the <SOS> token");

  // Duplicate fidelity: DUP(i) content equals ORIG(i) content.
  if (variant == LayoutVariant::Repeated) {
    for (int i = 2; i <= k; ++i) {
      const Segment& dup = find_segment(SegmentRole::dup(i));
      const Segment& orig = find_segment(SegmentRole::orig(i));
      if (dup.length() != orig.length() ||
          !std::equal(tokens.begin() + static_cast<long>(dup.begin),
                      tokens.begin() + static_cast<long>(dup.end),
                      tokens.begin() + static_cast<long>(orig.begin)))
        throw std::invalid_argument("PromptLayout: DUP" + std::to_string(i) +
                                    " content differs from ORIG" + std::to_string(i));
    }
  }
}

uint64_t PromptLayout::fingerprint() const {
  Fnv1a h;
  h.u64(variant == LayoutVariant::Plain ? 1 : 2).i64(k);
  h.ints(tokens);
  for (const auto& s : segments) {
    h.u64(static_cast<uint64_t>(s.role.kind)).i64(s.role.index).u64(s.begin).u64(s.end);
  }
  return h.digest();
}

std::string PromptLayout::to_json() const {
  nlohmann::ordered_json j;
  j["tokens"] = tokens;
  nlohmann::ordered_json segs = nlohmann::ordered_json::array();
  for (const auto& s : segments) {
    nlohmann::ordered_json seg;
    seg["role"] = role_name(s.role);
    seg["start"] = s.begin;
    seg["end"] = s.end;
    segs.push_back(seg);
  }
  j["segments"] = segs;
  j["variant"] = variant == LayoutVariant::Plain ? "plain" : "repeated";
  j["k"] = k;
  return j.dump(2) + "\n";
}

namespace {

void append_segment(PromptLayout& layout, SegmentRole role, std::span<const int> span_tokens) {
  Segment s;
  s.role = role;
  s.begin = layout.tokens.size();
  layout.tokens.insert(layout.tokens.end(), span_tokens.begin(), span_tokens.end());
  s.end = layout.tokens.size();
  layout.segments.push_back(s);
}

void check_demos(std::span<const Demonstration> demos) {
  for (const auto& d : demos) {
    if (d.input_tokens.empty())
      throw std::invalid_argument("layout: demonstration with empty input");
    if (d.label_id < 0) throw std::invalid_argument("layout: demonstration without label");
  }
}

}  // namespace

PromptLayout build_plain_layout(std::span<const Demonstration> demos, const QueryInput& query) {
  check_demos(demos);
  if (query.tokens.empty()) throw std::invalid_argument("layout: empty query");
  PromptLayout layout;
  layout.variant = LayoutVariant::Plain;
  layout.k = static_cast<int>(demos.size());
  const int sos = Vocabulary::kSos;
  append_segment(layout, SegmentRole::sos(), std::span<const int>(&sos, 1));
  for (size_t i = 0; i < demos.size(); ++i) {
    append_segment(layout, SegmentRole::orig(static_cast<int>(i) + 1),
                   demos[i].span_with_label());
  }
  append_segment(layout, SegmentRole::query(), query.tokens);
  layout.validate();
  return layout;
}

PromptLayout synthetic_layout(LayoutVariant variant, int k, size_t tokens_per_demo,
                              size_t query_tokens) {
  if (k < 0 || tokens_per_demo < 1 || query_tokens < 1)
    throw std::invalid_argument("synthetic_layout: spans must be non-empty");
  PromptLayout layout;
  layout.variant = variant;
  layout.k = k;
  const int sos = Vocabulary::kSos;
  append_segment(layout, SegmentRole::sos(), std::span<const int>(&sos, 1));
  auto demo_tokens = [&](int i) {
    // Distinct filler id per demonstration keeps duplicate fidelity checkable.
    return std::vector<int>(tokens_per_demo, 2 + i);
  };
  if (variant == LayoutVariant::Repeated) {
    if (k < 1)
      throw std::invalid_argument("synthetic_layout: repeated variant requires K >= 1");
    for (int i = 2; i <= k; ++i) append_segment(layout, SegmentRole::dup(i), demo_tokens(i));
  }
  for (int i = 1; i <= k; ++i) append_segment(layout, SegmentRole::orig(i), demo_tokens(i));
  append_segment(layout, SegmentRole::query(),
                 std::vector<int>(query_tokens, 2 + k + 1));
  layout.validate();
  return layout;
}

PromptLayout build_repeated_layout(std::span<const Demonstration> demos,
                                   const QueryInput& query) {
  if (demos.empty())
    throw std::invalid_argument("build_repeated_layout: repetition undefined for K=0");
  check_demos(demos);
  if (query.tokens.empty()) throw std::invalid_argument("layout: empty query");
  PromptLayout layout;
  layout.variant = LayoutVariant::Repeated;
  layout.k = static_cast<int>(demos.size());
  const int sos = Vocabulary::kSos;
  append_segment(layout, SegmentRole::sos(), std::span<const int>(&sos, 1));
  for (size_t i = 1; i < demos.size(); ++i) {
    append_segment(layout, SegmentRole::dup(static_cast<int>(i) + 1),
                   demos[i].span_with_label());
  }
  for (size_t i = 0; i < demos.size(); ++i) {
    append_segment(layout, SegmentRole::orig(static_cast<int>(i) + 1),
                   demos[i].span_with_label());
  }
  append_segment(layout, SegmentRole::query(), query.tokens);
  layout.validate();
  return layout;
}

}  // namespace slidemask
