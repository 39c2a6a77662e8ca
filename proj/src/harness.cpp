// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#include "slidemask/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <stdexcept>
#include <thread>

#include "slidemask/errors.hpp"
#include "slidemask/hash.hpp"

namespace slidemask {

namespace {

std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string query_policy_label(const QueryPolicy& q) {
  return q.all_demos ? "all_demos" : "last_" + std::to_string(q.last_n);
}

PromptLayout layout_for(const Episode& episode, const MaskSpec& spec) {
  if (method_uses_repeated_layout(spec.method))
    return build_repeated_layout(episode.demos, episode.query);
  return build_plain_layout(episode.demos, episode.query);
}

}  // namespace

std::string spec_label(const MaskSpec& spec);

std::string spec_label(const MaskSpec& spec) {
  std::string label = method_name(spec.method);
  if (method_is_windowed(spec.method)) {
    label += "[W=" + std::to_string(spec.window_w);
    if (!spec.query_policy.all_demos) label += ",q=last" + std::to_string(spec.query_policy.last_n);
    if (spec.dup_policy == DupPolicy::IsolatedDups) label += ",iso";
    label += "]";
  }
  return label;
}

int evaluate_episode(const ModelState& model, const Episode& episode, const MaskSpec& spec,
                     PositionPolicy policy) {
  const PromptLayout layout = layout_for(episode, spec);
  const AttentionMask mask = build_mask(spec, layout);
  const std::vector<int> positions = assign_positions(policy, spec, layout);
  const ForwardTrace trace = forward(model, layout.tokens, mask, positions);
  const LabelScore score =
      score_labels(trace, layout.query_end_position(), episode.label_map.label_ids);
  return score.chosen_index;
}

namespace {

/// Masks depend only on the spec and the segment length signature; episodes
/// from one config share them.
struct MaskCache {
  const MaskSpec& spec;
  std::map<std::vector<size_t>, std::pair<AttentionMask, std::vector<int>>> by_lengths;
  PositionPolicy policy;

  const std::pair<AttentionMask, std::vector<int>>& get(const PromptLayout& layout) {
    std::vector<size_t> lengths;
    lengths.reserve(layout.segments.size());
    for (const auto& s : layout.segments) lengths.push_back(s.length());
    auto it = by_lengths.find(lengths);
    if (it == by_lengths.end()) {
      it = by_lengths
               .emplace(std::move(lengths),
                        std::make_pair(build_mask(spec, layout),
                                       assign_positions(policy, spec, layout)))
               .first;
    }
    return it->second;
  }
};

void eval_range(const ModelState& model, const std::vector<Episode>& episodes,
                const MaskSpec& spec, PositionPolicy policy, size_t begin, size_t end,
                std::vector<uint8_t>& outcomes) {
  MaskCache cache{spec, {}, policy};
  for (size_t i = begin; i < end; ++i) {
    const Episode& ep = episodes[i];
    const PromptLayout layout = layout_for(ep, spec);
    const auto& [mask, positions] = cache.get(layout);
    const ForwardTrace trace = forward(model, layout.tokens, mask, positions);
    const LabelScore score =
        score_labels(trace, layout.query_end_position(), ep.label_map.label_ids);
    outcomes[i] = score.chosen_index == ep.gold ? 1 : 0;
  }
}

}  // namespace

std::vector<EvalRecord> run_matrix(const ModelState& model, const std::vector<MaskSpec>& specs,
                                   const TaskConfig& config, const TaskContext& ctx,
                                   const EvalOptions& options) {
  config.validate();
  const std::vector<Episode> episodes = gen_episodes(config, ctx);
  const uint64_t episode_fp = episodes_fingerprint(episodes);
  const uint64_t task_fp = config.fingerprint();

  std::vector<EvalRecord> records;
  for (const MaskSpec& spec : specs) {
    spec.validate();
    if (spec.k != config.k_shots)
      throw std::invalid_argument("run_matrix: spec K does not match task k_shots");
    if (method_uses_repeated_layout(spec.method) && config.k_shots < 1) {
      std::fprintf(stderr, "run_matrix: skipping %s (repeated layout undefined for K=0)\n",
                   spec_label(spec).c_str());
      continue;
    }
    const auto start = std::chrono::steady_clock::now();
    std::vector<uint8_t> outcomes(episodes.size(), 0);
    const int jobs = std::max(1, options.jobs);
    if (jobs == 1 || episodes.size() < 2) {
      eval_range(model, episodes, spec, options.position_policy, 0, episodes.size(), outcomes);
    } else {
      // Chunked workers write disjoint outcome slots; merge order is fixed,
      // so parallel and serial runs emit identical records.
      std::vector<std::thread> workers;
      const size_t chunk = (episodes.size() + static_cast<size_t>(jobs) - 1) /
                           static_cast<size_t>(jobs);
      for (int j = 0; j < jobs; ++j) {
        const size_t begin = static_cast<size_t>(j) * chunk;
        const size_t end = std::min(episodes.size(), begin + chunk);
        if (begin >= end) break;
        workers.emplace_back([&, begin, end] {
          eval_range(model, episodes, spec, options.position_policy, begin, end, outcomes);
        });
      }
      for (auto& w : workers) w.join();
    }

    EvalRecord record;
    record.task_fingerprint = task_fp;
    record.episode_fingerprint = episode_fp;
    record.spec = spec;
    record.position_policy = options.position_policy;
    record.seed = config.seed;
    record.episodes = static_cast<int>(episodes.size());
    record.correct = 0;
    for (uint8_t o : outcomes) record.correct += o;
    record.outcomes = std::move(outcomes);
    const PromptLayout first_layout = layout_for(episodes.front(), spec);
    record.nshot = nshot_profile(spec, first_layout);
    record.wall_time_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - start)
                              .count();
    records.push_back(std::move(record));
  }
  return records;
}

std::string records_to_csv(const std::vector<EvalRecord>& records, const TaskConfig& config) {
  std::string out =
      "seed,family,alphabet_size,n_classes,k_shots,episodes,method,window_w,sos_policy,"
      "dup_policy,query_policy,position_policy,accuracy,correct,nshot,task_fp,episode_fp,"
      "spec_fp,outcomes\n";
  for (const auto& r : records) {
    out += std::to_string(r.seed) + ',';
    out += family_name(config.family) + ',';
    out += std::to_string(config.alphabet_size) + ',';
    out += std::to_string(config.n_classes) + ',';
    out += std::to_string(r.spec.k) + ',';
    out += std::to_string(r.episodes) + ',';
    out += method_name(r.spec.method) + ',';
    out += std::to_string(r.spec.window_w) + ',';
    out += (r.spec.sos_policy == SosPolicy::AlwaysVisible ? "always_visible" : "window_only");
    out += ',';
    out += (r.spec.dup_policy == DupPolicy::CausalAmongDups ? "causal_among_dups"
                                                            : "isolated_dups");
    out += ',';
    out += query_policy_label(r.spec.query_policy) + ',';
    out += position_policy_name(r.position_policy) + ',';
    out += format_fixed(r.accuracy(), 6) + ',';
    out += std::to_string(r.correct) + ',';
    out += nshot_to_string(r.nshot) + ',';
    out += hex64(r.task_fingerprint) + ',';
    out += hex64(r.episode_fingerprint) + ',';
    out += hex64(r.spec.fingerprint()) + ',';
    out.reserve(out.size() + r.outcomes.size() + 2);
    for (uint8_t o : r.outcomes) out += o ? '1' : '0';
    out += '\n';
  }
  return out;
}

// ============================================================================
// Duplicate probe
// ============================================================================

std::vector<ProbeResult> duplicate_probe(const ModelState& model,
                                         const std::vector<MaskSpec>& specs,
                                         const TaskConfig& config, const TaskContext& ctx,
                                         PositionPolicy policy) {
  config.validate();
  const std::vector<Episode> episodes = gen_episodes(config, ctx);
  std::vector<ProbeResult> results;

  for (const MaskSpec& spec : specs) {
    spec.validate();
    if (!method_uses_repeated_layout(spec.method))
      throw std::invalid_argument("duplicate_probe: requires repeated-layout specs");
    if (spec.k != config.k_shots)
      throw std::invalid_argument("duplicate_probe: spec K does not match task k_shots");

    ProbeResult result;
    result.spec = spec;
    result.episodes = static_cast<int>(episodes.size());
    result.structurally_zero = true;
    result.bit_identical = true;
    int correct_clean = 0, correct_corrupted = 0;

    MaskCache cache{spec, {}, policy};
    for (const Episode& ep : episodes) {
      const PromptLayout layout = layout_for(ep, spec);
      const auto& [mask, positions] = cache.get(layout);
      const size_t scored = layout.query_end_position();
      const AttentionMask closure = visibility_closure(mask);

      // Corrupt every duplicate label token by cycling within the label set.
      std::vector<int> corrupted_tokens = layout.tokens;
      std::vector<size_t> corrupted_positions;
      for (const auto& seg : layout.segments) {
        if (seg.role.kind != SegmentKind::Dup) continue;
        const size_t label_pos = seg.end - 1;
        const int current = layout.tokens[label_pos];
        const auto& ids = ep.label_map.label_ids;
        const auto it = std::find(ids.begin(), ids.end(), current);
        if (it == ids.end()) throw gate_error("duplicate_probe: label token not in label map");
        const size_t idx = static_cast<size_t>(it - ids.begin());
        corrupted_tokens[label_pos] = ids[(idx + 1) % ids.size()];
        corrupted_positions.push_back(label_pos);
      }
      result.corrupted_positions += corrupted_positions.size();
      size_t affected = 0;
      for (size_t p : corrupted_positions) {
        if (closure.at(scored, p)) ++affected;
      }
      result.affected_positions += affected;
      if (affected > 0) result.structurally_zero = false;

      const ForwardTrace clean = forward(model, layout.tokens, mask, positions);
      const ForwardTrace dirty = forward(model, corrupted_tokens, mask, positions);
      const auto clean_row = clean.logits_at(scored);
      const auto dirty_row = dirty.logits_at(scored);
      const bool identical = std::memcmp(clean_row.data(), dirty_row.data(),
                                         clean_row.size() * sizeof(double)) == 0;
      if (affected == 0 && !identical)
        throw gate_error(
            "duplicate_probe: outputs changed although every corrupted position is outside "
            "the scored closure");
      if (!identical) result.bit_identical = false;
      for (size_t i = 0; i < clean_row.size(); ++i)
        result.max_logit_delta =
            std::max(result.max_logit_delta, std::abs(clean_row[i] - dirty_row[i]));

      const auto& ids = ep.label_map.label_ids;
      correct_clean += score_labels(clean, scored, ids).chosen_index == ep.gold ? 1 : 0;
      correct_corrupted += score_labels(dirty, scored, ids).chosen_index == ep.gold ? 1 : 0;
    }
    result.accuracy_clean = static_cast<double>(correct_clean) / result.episodes;
    result.accuracy_corrupted = static_cast<double>(correct_corrupted) / result.episodes;
    results.push_back(std::move(result));
  }
  return results;
}

// ============================================================================
// Shot sweep
// ============================================================================

MaskSpec respecialize(const MaskSpec& spec, int k) {
  MaskSpec out = spec;
  out.k = k;
  if (method_is_windowed(spec.method)) {
    out.window_w = std::min(std::max(1, spec.window_w), std::max(1, k));
  }
  if (!spec.query_policy.all_demos) {
    out.query_policy = QueryPolicy::last(std::min(spec.query_policy.last_n, std::max(1, k)));
  }
  return out;
}

std::vector<SweepCell> shot_sweep(const ModelState& model, const std::vector<int>& k_values,
                                  const std::vector<MaskSpec>& spec_templates,
                                  const TaskConfig& base_config, const EvalOptions& options) {
  if (!std::is_sorted(k_values.begin(), k_values.end()))
    throw std::invalid_argument("shot_sweep: k values must be ascending");
  std::vector<SweepCell> cells;
  for (int k : k_values) {
    TaskConfig config = base_config;
    config.k_shots = k;
    config.validate();
    const TaskContext ctx = TaskContext::build(config);
    for (const MaskSpec& tmpl : spec_templates) {
      SweepCell cell;
      cell.k = k;
      MaskSpec spec = respecialize(tmpl, k);
      if (method_uses_repeated_layout(spec.method) && k < 1) {
        cell.record.spec = spec;
        cell.skipped_reason = "repeated layout undefined for K=0";
        cells.push_back(std::move(cell));
        continue;
      }
      // Learned absolute positions bound the usable context length.
      if (model.config.position_mode == PositionMode::AbsoluteLearned) {
        const Episode probe_ep = gen_episode(config, ctx, 0);
        const PromptLayout probe_layout = layout_for(probe_ep, spec);
        if (probe_layout.size() > static_cast<size_t>(model.config.max_positions)) {
          cell.record.spec = spec;
          cell.skipped_reason = "sequence exceeds the learned position table";
          cells.push_back(std::move(cell));
          continue;
        }
      }
      auto records = run_matrix(model, {spec}, config, ctx, options);
      cell.record = std::move(records.front());
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

// ============================================================================
// Reporting
// ============================================================================

BinomialInterval binomial_interval(double p, int n, double z) {
  const double half = z * std::sqrt(p * (1.0 - p) / static_cast<double>(n));
  return {p - half, p + half};
}

std::string markdown_method_table(const std::vector<EvalRecord>& records, double chance) {
  std::string out = "| method | n-shots | accuracy | delta vs chance |\n";
  out += "|---|---|---|---|\n";
  for (const auto& r : records) {
    out += "| " + spec_label(r.spec) + " | " + nshot_to_string(r.nshot) + " | " +
           format_fixed(r.accuracy(), 4) + " | " + format_fixed(r.accuracy() - chance, 4) +
           " |\n";
  }
  return out;
}

std::string markdown_sweep_table(const std::vector<SweepCell>& cells) {
  // Pivot: rows K, columns method labels in first-seen order.
  std::vector<std::string> columns;
  std::vector<int> ks;
  std::map<std::pair<int, std::string>, std::string> value;
  for (const auto& cell : cells) {
    const std::string label = spec_label(cell.record.spec);
    if (std::find(columns.begin(), columns.end(), label) == columns.end())
      columns.push_back(label);
    if (std::find(ks.begin(), ks.end(), cell.k) == ks.end()) ks.push_back(cell.k);
    value[{cell.k, label}] = cell.skipped_reason ? ("skip: " + *cell.skipped_reason)
                                                 : format_fixed(cell.record.accuracy(), 4);
  }
  std::string out = "| K |";
  for (const auto& c : columns) out += " " + c + " |";
  out += "\n|---|";
  for (size_t i = 0; i < columns.size(); ++i) out += "---|";
  out += "\n";
  for (int k : ks) {
    out += "| " + std::to_string(k) + " |";
    for (const auto& c : columns) {
      auto it = value.find({k, c});
      out += " " + (it == value.end() ? std::string("-") : it->second) + " |";
    }
    out += "\n";
  }
  return out;
}

std::string markdown_probe_table(const std::vector<ProbeResult>& probes) {
  std::string out =
      "| method | clean acc | corrupted acc | delta | corrupted cells | inside closure | "
      "structural zero | bit identical | max logit delta |\n";
  out += "|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& p : probes) {
    out += "| " + spec_label(p.spec) + " | " + format_fixed(p.accuracy_clean, 4) + " | " +
           format_fixed(p.accuracy_corrupted, 4) + " | " + format_fixed(p.delta(), 4) + " | " +
           std::to_string(p.corrupted_positions) + " | " + std::to_string(p.affected_positions) +
           " | " + (p.structurally_zero ? "yes" : "no") + " | " +
           (p.bit_identical ? "yes" : "no") + " | " + format_fixed(p.max_logit_delta, 9) +
           " |\n";
  }
  return out;
}

}  // namespace slidemask
