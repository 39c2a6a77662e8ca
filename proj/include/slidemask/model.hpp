// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slidemask/mask.hpp"

namespace slidemask {

// ============================================================================
// Configuration and parameters
// ============================================================================

enum class PositionMode : uint8_t { None, AbsoluteLearned, RelativeRotation };

std::string position_mode_name(PositionMode m);
PositionMode position_mode_from_name(const std::string& name);

/// All math runs in 64-bit floats; tolerances in the test suite assume it.
struct ModelConfig {
  int vocab_size = 0;
  int d_model = 0;
  int n_heads = 0;
  int n_layers = 0;
  int d_ff = 0;
  PositionMode position_mode = PositionMode::None;
  uint64_t seed = 0;
  int max_positions = 256;  // capacity of the learned absolute table

  int head_dim() const { return d_model / n_heads; }
  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

struct LayerParams {
  std::vector<double> attn_gain;          // [d]
  std::vector<double> wq, wk, wv, wo;     // [d x d] row-major (out, in)
  std::vector<double> bq, bk, bv, bo;     // [d]
  std::vector<double> ffn_gain;           // [d]
  std::vector<double> w1;                 // [d_ff x d]
  std::vector<double> b1;                 // [d_ff]
  std::vector<double> w2;                 // [d x d_ff]
  std::vector<double> b2;                 // [d]
};

/// Parameter tensors plus a step counter. Tensor layout is fixed by the
/// config; visit_tensors exposes a stable (name, data) ordering used by
/// checkpoints, SGD and the gradient checker.
struct ModelState {
  ModelConfig config;
  std::vector<double> tok_emb;     // [vocab x d]
  std::vector<double> pos_emb;     // [max_positions x d], absolute mode only
  std::vector<double> final_gain;  // [d]
  std::vector<double> w_out;       // [vocab x d]
  std::vector<double> b_out;       // [vocab]
  std::vector<LayerParams> layers;
  int64_t step = 0;

  size_t parameter_count() const;
  void check_finite(const std::string& context) const;

  template <typename Fn>  // Fn(const std::string&, std::vector<double>&)
  void visit_tensors(Fn&& fn);
  template <typename Fn>
  void visit_tensors(Fn&& fn) const;
};

ModelState init_model(const ModelConfig& config);

/// Gradient accumulator shaped like the model.
ModelState zeros_like(const ModelState& model);

// ============================================================================
// Forward pass
// ============================================================================

struct TraceOptions {
  bool retain_hidden = false;     // per-layer post-block states
  bool retain_attention = false;  // per-row attention sums
};

struct ForwardTrace {
  size_t n = 0;
  int vocab = 0;
  std::vector<double> logits;  // [n x vocab]
  /// hidden[0] = embeddings, hidden[l] = residual stream after layer l.
  std::vector<std::vector<double>> hidden;
  /// Visible-cell attention weight sums, one per (layer, head, position).
  std::vector<double> attention_row_sums;

  std::span<const double> logits_at(size_t position) const;
  std::span<const double> hidden_at(size_t layer, size_t position) const;
};

/// Masked forward pass. Logits at position t depend exactly on the
/// positions in visibility_closure(mask) row t: contributions from masked
/// cells are never computed, so the exclusion is bit-exact.
ForwardTrace forward(const ModelState& model, std::span<const int> tokens,
                     const AttentionMask& mask, std::span<const int> positions,
                     const TraceOptions& options = {});

/// Position assignments.
std::vector<int> absolute_positions(size_t n);
/// Offset of each token inside its own attention window (start token = 0,
/// window members = 1..). Requires a windowed spec on a repeated layout;
/// plain layouts fall back to absolute indices.
std::vector<int> window_local_positions(const MaskSpec& spec, const PromptLayout& layout);

enum class PositionPolicy : uint8_t { Absolute, WindowLocal };
std::string position_policy_name(PositionPolicy p);
PositionPolicy position_policy_from_name(const std::string& name);
std::vector<int> assign_positions(PositionPolicy policy, const MaskSpec& spec,
                                  const PromptLayout& layout);

// ============================================================================
// Training
// ============================================================================

/// Mean next-token cross-entropy in nats over positions 0..n-2.
double clm_loss(const ModelState& model, std::span<const int> tokens,
                const AttentionMask& mask, std::span<const int> positions);

/// Accumulates d(loss)/d(params) into `grads` (shaped like the model);
/// returns the loss. One sequence per call.
double clm_backward(const ModelState& model, std::span<const int> tokens,
                    const AttentionMask& mask, std::span<const int> positions,
                    ModelState& grads);

struct SgdOptions {
  double learning_rate = 0.1;
  int64_t steps = 0;
  int batch_size = 1;
  uint64_t seed = 0;
  double heldout_fraction = 0.1;
  int64_t log_every = 50;
};

struct TrainLogEntry {
  int64_t step = 0;
  double train_loss = 0.0;
  double heldout_loss = 0.0;
};

struct TrainResult {
  double initial_heldout_loss = 0.0;
  double final_heldout_loss = 0.0;
  std::vector<TrainLogEntry> log;
};

/// Plain SGD with a fixed step size over a corpus of token sequences.
/// Training always uses plain causal masks; custom masks are an
/// inference-time construct. Deterministic given seed; throws gate_error on
/// divergence (non-finite loss).
TrainResult train_clm(ModelState& model, const std::vector<std::vector<int>>& corpus,
                      const SgdOptions& options);

// ============================================================================
// Scoring and checking
// ============================================================================

struct LabelScore {
  int chosen_index = 0;  // index into label_ids
  std::vector<double> log_probs;
};

/// Next-token label decision at the final query position. Log-probs are
/// normalized over the full vocabulary; ties break toward the lowest label
/// index.
LabelScore score_labels(const ForwardTrace& trace, size_t query_end,
                        std::span<const int> label_ids);

struct GradCheckReport {
  double max_rel_error = 0.0;
  size_t coordinates = 0;
  std::string worst_tensor;
  size_t worst_index = 0;
};

/// Central finite differences vs analytic gradients on sampled coordinates.
GradCheckReport finite_difference_check(const ModelState& model, std::span<const int> tokens,
                                        const AttentionMask& mask,
                                        std::span<const int> positions,
                                        size_t sample_coordinates, uint64_t seed);

// ============================================================================
// Checkpoints
// ============================================================================

/// Versioned binary tensor dump with a JSON config header; byte-stable for
/// equal seeds and configs. `vocab_fingerprint` ties a model to the task
/// vocabulary it was trained with.
std::string serialize_checkpoint(const ModelState& model, uint64_t vocab_fingerprint);
void save_checkpoint(const ModelState& model, uint64_t vocab_fingerprint,
                     const std::string& path);

struct Checkpoint {
  ModelState model;
  uint64_t vocab_fingerprint = 0;
};

Checkpoint parse_checkpoint(const std::string& bytes);
Checkpoint load_checkpoint(const std::string& path);

// ============================================================================
// Template definitions
// ============================================================================

template <typename Fn>
void ModelState::visit_tensors(Fn&& fn) {
  fn("tok_emb", tok_emb);
  if (config.position_mode == PositionMode::AbsoluteLearned) fn("pos_emb", pos_emb);
  for (size_t l = 0; l < layers.size(); ++l) {
    auto& lp = layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    fn(p + "attn_gain", lp.attn_gain);
    fn(p + "wq", lp.wq);
    fn(p + "wk", lp.wk);
    fn(p + "wv", lp.wv);
    fn(p + "wo", lp.wo);
    fn(p + "bq", lp.bq);
    fn(p + "bk", lp.bk);
    fn(p + "bv", lp.bv);
    fn(p + "bo", lp.bo);
    fn(p + "ffn_gain", lp.ffn_gain);
    fn(p + "w1", lp.w1);
    fn(p + "b1", lp.b1);
    fn(p + "w2", lp.w2);
    fn(p + "b2", lp.b2);
  }
  fn("final_gain", final_gain);
  fn("w_out", w_out);
  fn("b_out", b_out);
}

template <typename Fn>
void ModelState::visit_tensors(Fn&& fn) const {
  const_cast<ModelState*>(this)->visit_tensors(
      [&](const std::string& name, std::vector<double>& data) {
        fn(name, static_cast<const std::vector<double>&>(data));
      });
}

}  // namespace slidemask
