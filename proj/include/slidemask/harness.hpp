// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "slidemask/kv_cache.hpp"
#include "slidemask/model.hpp"
#include "slidemask/tasks.hpp"

namespace slidemask {

// ============================================================================
// Records
// ============================================================================

struct EvalRecord {
  uint64_t task_fingerprint = 0;
  uint64_t episode_fingerprint = 0;
  MaskSpec spec;
  PositionPolicy position_policy = PositionPolicy::Absolute;
  uint64_t seed = 0;
  int episodes = 0;
  int correct = 0;
  std::vector<int> nshot;
  std::vector<uint8_t> outcomes;  // per-episode 0/1, accuracy is recomputable
  double wall_time_ms = 0.0;      // excluded from deterministic exports

  double accuracy() const { return episodes ? static_cast<double>(correct) / episodes : 0.0; }
};

/// Deterministic CSV with one row per record. Wall time is intentionally
/// not a column: results files must be byte-identical across reruns.
std::string records_to_csv(const std::vector<EvalRecord>& records, const TaskConfig& config);

// ============================================================================
// Evaluation
// ============================================================================

struct EvalOptions {
  PositionPolicy position_policy = PositionPolicy::Absolute;
  int jobs = 1;
};

/// Layout/mask pair reused across episodes with equal segment lengths.
int evaluate_episode(const ModelState& model, const Episode& episode, const MaskSpec& spec,
                     PositionPolicy policy);

/// Scores every spec over the exact same episode list (fair-comparison
/// contract: per-seed episode fingerprints are equal across specs).
std::vector<EvalRecord> run_matrix(const ModelState& model, const std::vector<MaskSpec>& specs,
                                   const TaskConfig& config, const TaskContext& ctx,
                                   const EvalOptions& options = {});

// ============================================================================
// Probes and sweeps
// ============================================================================

struct ProbeResult {
  MaskSpec spec;
  int episodes = 0;
  double accuracy_clean = 0.0;
  double accuracy_corrupted = 0.0;
  size_t corrupted_positions = 0;
  size_t affected_positions = 0;  // corrupted cells inside the scored closure
  bool structurally_zero = false;
  bool bit_identical = false;
  double max_logit_delta = 0.0;

  double delta() const { return accuracy_corrupted - accuracy_clean; }
};

/// Corrupts duplicate-segment label tokens (cycled within the label set)
/// while originals stay clean, then compares label decisions. When every
/// corrupted position lies outside the scored position's visibility
/// closure, the outputs must be bit-identical.
std::vector<ProbeResult> duplicate_probe(const ModelState& model,
                                         const std::vector<MaskSpec>& specs,
                                         const TaskConfig& config, const TaskContext& ctx,
                                         PositionPolicy policy);

struct SweepCell {
  int k = 0;
  EvalRecord record;
  std::optional<std::string> skipped_reason;
};

/// Accuracy per demonstration count per method, one episode set per K.
std::vector<SweepCell> shot_sweep(const ModelState& model, const std::vector<int>& k_values,
                                  const std::vector<MaskSpec>& spec_templates,
                                  const TaskConfig& base_config, const EvalOptions& options);

/// Respecializes a spec template to a different K (windows and LastN are
/// clamped to stay valid).
MaskSpec respecialize(const MaskSpec& spec, int k);

// ============================================================================
// Reporting helpers
// ============================================================================

/// Short human-readable spec tag, e.g. "rdsca[W=3,iso]".
std::string spec_label(const MaskSpec& spec);

struct BinomialInterval {
  double low = 0.0;
  double high = 0.0;
};

/// Normal-approximation interval around chance p for n trials.
BinomialInterval binomial_interval(double p, int n, double z);

std::string markdown_method_table(const std::vector<EvalRecord>& records, double chance);
std::string markdown_sweep_table(const std::vector<SweepCell>& cells);
std::string markdown_probe_table(const std::vector<ProbeResult>& probes);

}  // namespace slidemask
