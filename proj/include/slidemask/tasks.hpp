// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "slidemask/layout.hpp"

namespace slidemask {

/// Synthetic classification families. Every episode draws a fresh latent
/// input->class mapping, so label priors carry no information and success
/// requires reading the in-context demonstrations.
///
///   permutation_map:        input = [key, salt]; classes assigned to keys
///                           through a per-episode shuffled, class-balanced
///                           table.
///   key_value_lookup:       input = [key, salt]; per-episode iid random
///                           key->class table.
///   noisy_linear_threshold: input = sign pattern of length 5; class =
///                           sign of a per-episode random +-1 weight vector
///                           applied to it (binary only).
enum class TaskFamily : uint8_t { PermutationMap, KeyValueLookup, NoisyLinearThreshold };

std::string family_name(TaskFamily f);
TaskFamily family_from_name(const std::string& name);

/// Width of the per-episode label-token draw: Narrow shuffles class
/// assignment over the first n_classes pool words (easier for tiny models),
/// Full draws fresh tokens from the whole pool each episode.
enum class LabelPool : uint8_t { Narrow, Full };

struct TaskConfig {
  TaskFamily family = TaskFamily::KeyValueLookup;
  int alphabet_size = 8;
  int n_classes = 2;
  int k_shots = 4;
  int episodes = 2000;
  uint64_t seed = 0;
  int template_id = 0;
  LabelMode label_mode = LabelMode::SemanticallyUnrelated;
  LabelPool label_pool = LabelPool::Narrow;

  void validate() const;
  uint64_t fingerprint() const;
  std::string to_json() const;
  static TaskConfig from_json(const std::string& text);
  void save(const std::string& path) const;
  static TaskConfig load(const std::string& path);
};

/// Vocabulary and label-word pools shared by every episode of a task.
struct TaskContext {
  Vocabulary vocab;
  std::vector<int> natural_pool;
  std::vector<int> sul_pool;

  static TaskContext build(const TaskConfig& config);
  const std::vector<int>& pool(LabelMode mode) const;
};

struct Episode {
  std::vector<Demonstration> demos;
  QueryInput query;
  int gold = 0;
  LabelMap label_map;
  uint64_t mapping_fingerprint = 0;

  uint64_t fingerprint() const;
};

/// Deterministic per (config.seed, episode index); demo inputs are pairwise
/// distinct and never equal the query input; demo classes are balanced
/// where K permits.
std::vector<Episode> gen_episodes(const TaskConfig& config, const TaskContext& ctx);
Episode gen_episode(const TaskConfig& config, const TaskContext& ctx, int episode_index);

uint64_t episodes_fingerprint(const std::vector<Episode>& episodes);

}  // namespace slidemask
