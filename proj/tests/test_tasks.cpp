// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#include <set>
#include <stdexcept>

#include "doctest.h"
#include "slidemask/tasks.hpp"

using namespace slidemask;

namespace {

TaskConfig base_config(TaskFamily family) {
  TaskConfig c;
  c.family = family;
  c.alphabet_size = 8;
  c.n_classes = 2;
  c.k_shots = 4;
  c.episodes = 50;
  c.seed = 1;
  return c;
}

}  // namespace

TEST_CASE("episode generation is deterministic per seed") {
  for (TaskFamily family : {TaskFamily::PermutationMap, TaskFamily::KeyValueLookup,
                            TaskFamily::NoisyLinearThreshold}) {
    const TaskConfig config = base_config(family);
    const TaskContext ctx = TaskContext::build(config);
    const auto a = gen_episodes(config, ctx);
    const auto b = gen_episodes(config, ctx);
    CHECK(episodes_fingerprint(a) == episodes_fingerprint(b));

    TaskConfig other = config;
    other.seed = 2;
    CHECK(episodes_fingerprint(gen_episodes(other, ctx)) != episodes_fingerprint(a));
  }
}

TEST_CASE("demo inputs are distinct and never equal the query input") {
  for (TaskFamily family : {TaskFamily::PermutationMap, TaskFamily::KeyValueLookup,
                            TaskFamily::NoisyLinearThreshold}) {
    TaskConfig config = base_config(family);
    config.episodes = 100;
    const TaskContext ctx = TaskContext::build(config);
    for (const Episode& ep : gen_episodes(config, ctx)) {
      std::set<std::vector<int>> inputs;
      for (const auto& d : ep.demos) CHECK(inputs.insert(d.input_tokens).second);
      CHECK_FALSE(inputs.contains(ep.query.tokens));
      CHECK(ep.demos.size() == 4);
      CHECK(ep.gold >= 0);
      CHECK(ep.gold < config.n_classes);
    }
  }
}

TEST_CASE("gold class is answerable from the demonstrations") {
  // For the mapping families, the query key (first input symbol) must
  // appear in some demonstration carrying the gold label.
  for (TaskFamily family : {TaskFamily::PermutationMap, TaskFamily::KeyValueLookup}) {
    TaskConfig config = base_config(family);
    config.episodes = 200;
    config.n_classes = 3;
    config.k_shots = 5;
    const TaskContext ctx = TaskContext::build(config);
    for (const Episode& ep : gen_episodes(config, ctx)) {
      const int query_key = ep.query.tokens[1];  // [Input:, key, salt, Label:]
      const int gold_label = ep.label_map.label_ids[static_cast<size_t>(ep.gold)];
      bool found = false;
      for (const auto& d : ep.demos) {
        if (d.input_tokens[1] == query_key) {
          CHECK(d.label_id == gold_label);  // mapping is a function of the key
          found = true;
        }
      }
      CHECK(found);
    }
  }
}

TEST_CASE("label marginal is uniform within two percent") {
  for (TaskFamily family : {TaskFamily::PermutationMap, TaskFamily::KeyValueLookup}) {
    TaskConfig config = base_config(family);
    config.episodes = 10000;
    config.n_classes = 2;
    const TaskContext ctx = TaskContext::build(config);
    std::vector<int> counts(static_cast<size_t>(config.n_classes), 0);
    for (const Episode& ep : gen_episodes(config, ctx))
      counts[static_cast<size_t>(ep.gold)]++;
    for (int c : counts) {
      const double frac = static_cast<double>(c) / config.episodes;
      CHECK(frac == doctest::Approx(0.5).epsilon(0.04));  // within 2 points of 50%
    }
  }
}

TEST_CASE("per-episode label maps stay inside the configured pool") {
  TaskConfig config = base_config(TaskFamily::KeyValueLookup);
  config.label_mode = LabelMode::SemanticallyUnrelated;
  const TaskContext ctx = TaskContext::build(config);
  const auto pool = ctx.pool(LabelMode::SemanticallyUnrelated);
  const std::set<int> pool_set(pool.begin(), pool.end());
  bool saw_variation = false;
  std::vector<int> first;
  for (const Episode& ep : gen_episodes(config, ctx)) {
    for (int id : ep.label_map.label_ids) CHECK(pool_set.contains(id));
    if (first.empty())
      first = ep.label_map.label_ids;
    else if (ep.label_map.label_ids != first)
      saw_variation = true;
  }
  CHECK(saw_variation);  // fresh label assignment per episode
}

TEST_CASE("infeasible configs are rejected") {
  TaskConfig config = base_config(TaskFamily::PermutationMap);
  config.n_classes = 1;
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);

  config = base_config(TaskFamily::PermutationMap);
  config.alphabet_size = 1;
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);

  config = base_config(TaskFamily::NoisyLinearThreshold);
  config.n_classes = 3;
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);

  config = base_config(TaskFamily::KeyValueLookup);
  config.k_shots = 1000;
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);

  config = base_config(TaskFamily::KeyValueLookup);
  config.episodes = 0;
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);
}

TEST_CASE("task config json round-trips") {
  TaskConfig config = base_config(TaskFamily::NoisyLinearThreshold);
  config.label_mode = LabelMode::Natural;
  config.template_id = 2;
  const TaskConfig back = TaskConfig::from_json(config.to_json());
  CHECK(back.family == config.family);
  CHECK(back.template_id == 2);
  CHECK(back.label_mode == LabelMode::Natural);
  CHECK(back.fingerprint() == config.fingerprint());
}

TEST_CASE("zero-shot episodes carry a valid gold class") {
  TaskConfig config = base_config(TaskFamily::KeyValueLookup);
  config.k_shots = 0;
  const TaskContext ctx = TaskContext::build(config);
  for (const Episode& ep : gen_episodes(config, ctx)) {
    CHECK(ep.demos.empty());
    CHECK_FALSE(ep.query.tokens.empty());
    CHECK(ep.gold >= 0);
    CHECK(ep.gold < config.n_classes);
  }
}
