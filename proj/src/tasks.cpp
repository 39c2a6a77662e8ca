// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#include "slidemask/tasks.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "slidemask/hash.hpp"
#include "slidemask/manifest.hpp"
#include "slidemask/rng.hpp"

namespace slidemask {

namespace {

constexpr int kLinearInputLen = 5;  // odd, so the threshold never ties
constexpr int kMaxRejection = 10000;

const std::vector<std::string>& natural_words() {
  static const std::vector<std::string> words = {"negative", "positive", "neutral",
                                                 "entailment", "contradiction", "yes",
                                                 "no", "maybe"};
  return words;
}

const std::vector<std::string>& sul_words() {
  static const std::vector<std::string> words = {"Foo", "Bar", "Baz", "Qux",
                                                 "Zap", "Vex", "Nub", "Kex"};
  return words;
}

std::string symbol_name(int i) { return "a" + std::to_string(i); }

}  // namespace

std::string family_name(TaskFamily f) {
  switch (f) {
    case TaskFamily::PermutationMap:
      return "permutation_map";
    case TaskFamily::KeyValueLookup:
      return "key_value_lookup";
    case TaskFamily::NoisyLinearThreshold:
      return "noisy_linear_threshold";
  }
  return "?";
}

TaskFamily family_from_name(const std::string& name) {
  if (name == "permutation_map") return TaskFamily::PermutationMap;
  if (name == "key_value_lookup") return TaskFamily::KeyValueLookup;
  if (name == "noisy_linear_threshold") return TaskFamily::NoisyLinearThreshold;
  throw std::invalid_argument("unknown task family: " + name);
}

void TaskConfig::validate() const {
  if (n_classes < 2) throw std::invalid_argument("TaskConfig: n_classes must be >= 2");
  if (k_shots < 0) throw std::invalid_argument("TaskConfig: k_shots must be >= 0");
  if (episodes < 1) throw std::invalid_argument("TaskConfig: episodes must be >= 1");
  if (template_id < 0 || template_id >= template_count())
    throw std::invalid_argument("TaskConfig: unknown template id");
  if (n_classes > static_cast<int>(sul_words().size()))
    throw std::invalid_argument("TaskConfig: n_classes exceeds the label word pool");
  if (family == TaskFamily::NoisyLinearThreshold) {
    if (n_classes != 2)
      throw std::invalid_argument("TaskConfig: noisy_linear_threshold is binary only");
    if (alphabet_size < 2)
      throw std::invalid_argument("TaskConfig: noisy_linear_threshold needs two sign symbols");
    if (k_shots > 12)
      throw std::invalid_argument("TaskConfig: infeasible k_shots for 5-bit sign patterns");
  } else {
    if (alphabet_size < n_classes)
      throw std::invalid_argument("TaskConfig: alphabet must cover every class");
    if (k_shots > alphabet_size * alphabet_size / 2)
      throw std::invalid_argument("TaskConfig: infeasible k_shots for this alphabet");
  }
}

uint64_t TaskConfig::fingerprint() const { return hash_string(to_json()); }

std::string TaskConfig::to_json() const {
  nlohmann::ordered_json j;
  j["family"] = family_name(family);
  j["alphabet_size"] = alphabet_size;
  j["n_classes"] = n_classes;
  j["k_shots"] = k_shots;
  j["episodes"] = episodes;
  j["seed"] = seed;
  j["template_id"] = template_id;
  j["label_mode"] =
      label_mode == LabelMode::Natural ? "natural" : "semantically_unrelated";
  j["label_pool"] = label_pool == LabelPool::Narrow ? "narrow" : "full";
  return j.dump();
}

TaskConfig TaskConfig::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  TaskConfig c;
  c.family = family_from_name(j.at("family").get<std::string>());
  c.alphabet_size = j.value("alphabet_size", 8);
  c.n_classes = j.value("n_classes", 2);
  c.k_shots = j.value("k_shots", 4);
  c.episodes = j.value("episodes", 2000);
  c.seed = j.value("seed", uint64_t{0});
  c.template_id = j.value("template_id", 0);
  const std::string mode = j.value("label_mode", "semantically_unrelated");
  if (mode == "natural") {
    c.label_mode = LabelMode::Natural;
  } else if (mode == "semantically_unrelated") {
    c.label_mode = LabelMode::SemanticallyUnrelated;
  } else {
    throw std::invalid_argument("unknown label mode: " + mode);
  }
  const std::string pool = j.value("label_pool", "narrow");
  if (pool == "narrow") {
    c.label_pool = LabelPool::Narrow;
  } else if (pool == "full") {
    c.label_pool = LabelPool::Full;
  } else {
    throw std::invalid_argument("unknown label pool: " + pool);
  }
  c.validate();
  return c;
}

void TaskConfig::save(const std::string& path) const { write_file(path, to_json() + "\n"); }

TaskConfig TaskConfig::load(const std::string& path) { return from_json(read_file(path)); }

TaskContext TaskContext::build(const TaskConfig& config) {
  config.validate();
  TaskContext ctx;
  // Fixed interning order keeps vocab ids stable across runs and configs
  // with equal alphabet sizes.
  ctx.vocab.intern("Input:");
  ctx.vocab.intern("Label:");
  ctx.vocab.intern("Q:");
  ctx.vocab.intern("A:");
  ctx.vocab.intern("->");
  for (int i = 0; i < config.alphabet_size; ++i) ctx.vocab.intern(symbol_name(i));
  for (const auto& w : natural_words()) ctx.natural_pool.push_back(ctx.vocab.intern(w));
  for (const auto& w : sul_words()) ctx.sul_pool.push_back(ctx.vocab.intern(w));
  return ctx;
}

const std::vector<int>& TaskContext::pool(LabelMode mode) const {
  return mode == LabelMode::Natural ? natural_pool : sul_pool;
}

uint64_t Episode::fingerprint() const {
  Fnv1a h;
  for (const auto& d : demos) {
    h.ints(d.input_tokens).i64(d.label_id);
  }
  h.ints(query.tokens);
  h.i64(gold);
  h.ints(label_map.label_ids);
  h.u64(mapping_fingerprint);
  return h.digest();
}

namespace {

struct EpisodeBuilder {
  const TaskConfig& config;
  const TaskContext& ctx;
  Rng rng;

  LabelMap draw_label_map() {
    std::vector<int> pool = ctx.pool(config.label_mode);
    if (config.label_pool == LabelPool::Narrow)
      pool.resize(static_cast<size_t>(config.n_classes));
    rng.shuffle(pool);
    LabelMap map;
    map.mode = config.label_mode;
    map.label_ids.assign(pool.begin(), pool.begin() + config.n_classes);
    map.validate();
    return map;
  }

  /// Rotating extras keep the balanced class multiset unbiased when K is
  /// not a multiple of C.
  std::vector<int> balanced_classes(int k) {
    std::vector<int> classes;
    const int offset = static_cast<int>(rng.next_below(static_cast<uint64_t>(config.n_classes)));
    for (int i = 0; i < k; ++i) classes.push_back((i + offset) % config.n_classes);
    rng.shuffle(classes);
    return classes;
  }

  Episode build_mapping_episode() {
    const int m = config.alphabet_size;
    const int c = config.n_classes;
    // Latent key -> class table, fresh per episode.
    std::vector<int> table(static_cast<size_t>(m));
    if (config.family == TaskFamily::PermutationMap) {
      // Shuffled alphabet ranked mod C: classes are balanced over keys.
      std::vector<int> order(static_cast<size_t>(m));
      for (int i = 0; i < m; ++i) order[static_cast<size_t>(i)] = i;
      rng.shuffle(order);
      for (int rank = 0; rank < m; ++rank) table[static_cast<size_t>(order[rank])] = rank % c;
    } else {
      // iid classes, redrawn until every class owns at least one key.
      for (int attempt = 0;; ++attempt) {
        std::set<int> seen;
        for (auto& cls : table) {
          cls = static_cast<int>(rng.next_below(static_cast<uint64_t>(c)));
          seen.insert(cls);
        }
        if (static_cast<int>(seen.size()) == c) break;
        if (attempt > kMaxRejection)
          throw std::invalid_argument("gen_episodes: cannot cover all classes");
      }
    }
    std::vector<std::vector<int>> keys_of_class(static_cast<size_t>(c));
    for (int key = 0; key < m; ++key)
      keys_of_class[static_cast<size_t>(table[static_cast<size_t>(key)])].push_back(key);

    Episode ep;
    ep.label_map = draw_label_map();
    std::set<std::pair<int, int>> used_inputs;
    std::set<int> demo_classes;
    std::vector<int> demo_keys;

    for (int target : balanced_classes(config.k_shots)) {
      for (int attempt = 0;; ++attempt) {
        const int key = rng.pick(keys_of_class[static_cast<size_t>(target)]);
        const int salt = static_cast<int>(rng.next_below(static_cast<uint64_t>(m)));
        if (used_inputs.insert({key, salt}).second) {
          RawExample x{{symbol_name(key), symbol_name(salt)}, target};
          ep.demos.push_back(render_demonstration(ctx.vocab, x, ep.label_map,
                                                  config.template_id));
          demo_classes.insert(target);
          demo_keys.push_back(key);
          break;
        }
        if (attempt > kMaxRejection)
          throw std::invalid_argument("gen_episodes: cannot build distinct demo inputs");
      }
    }

    // Gold is drawn uniformly; for K >= 1 the query key must be answerable
    // from the demos, so the draw is over classes the demos exhibit.
    int gold;
    std::vector<int> gold_keys;
    if (config.k_shots >= 1) {
      std::vector<int> present(demo_classes.begin(), demo_classes.end());
      gold = present[static_cast<size_t>(rng.next_below(present.size()))];
      for (size_t i = 0; i < ep.demos.size(); ++i) {
        if (table[static_cast<size_t>(demo_keys[i])] == gold) gold_keys.push_back(demo_keys[i]);
      }
    } else {
      gold = static_cast<int>(rng.next_below(static_cast<uint64_t>(c)));
      gold_keys = keys_of_class[static_cast<size_t>(gold)];
    }
    for (int attempt = 0;; ++attempt) {
      const int key = gold_keys[static_cast<size_t>(rng.next_below(gold_keys.size()))];
      const int salt = static_cast<int>(rng.next_below(static_cast<uint64_t>(m)));
      if (!used_inputs.contains({key, salt})) {
        ep.query = render_query(
            ctx.vocab, std::vector<std::string>{symbol_name(key), symbol_name(salt)},
            config.template_id);
        break;
      }
      if (attempt > kMaxRejection)
        throw std::invalid_argument("gen_episodes: cannot build a distinct query input");
    }
    ep.gold = gold;
    Fnv1a h;
    h.ints(table).ints(ep.label_map.label_ids);
    ep.mapping_fingerprint = h.digest();
    return ep;
  }

  Episode build_linear_episode() {
    // x in {+1,-1}^L rendered as symbols a0/a1; class = [w.x > 0].
    std::vector<int> w(kLinearInputLen);
    for (auto& wi : w) wi = rng.next_bool() ? 1 : -1;
    auto sample_x = [&](int target_class, const std::set<std::vector<int>>& used,
                        std::vector<int>& out) {
      for (int attempt = 0;; ++attempt) {
        out.resize(kLinearInputLen);
        int dot = 0;
        for (int i = 0; i < kLinearInputLen; ++i) {
          out[static_cast<size_t>(i)] = rng.next_bool() ? 1 : -1;
          dot += w[static_cast<size_t>(i)] * out[static_cast<size_t>(i)];
        }
        const int cls = dot > 0 ? 1 : 0;
        if (cls == target_class && !used.contains(out)) return;
        if (attempt > kMaxRejection)
          throw std::invalid_argument("gen_episodes: cannot sample sign patterns");
      }
    };
    auto to_symbols = [](const std::vector<int>& x) {
      std::vector<std::string> s;
      for (int v : x) s.push_back(symbol_name(v > 0 ? 0 : 1));
      return s;
    };

    Episode ep;
    ep.label_map = draw_label_map();
    std::set<std::vector<int>> used;
    std::vector<int> x;
    for (int target : balanced_classes(config.k_shots)) {
      sample_x(target, used, x);
      used.insert(x);
      RawExample raw{to_symbols(x), target};
      ep.demos.push_back(render_demonstration(ctx.vocab, raw, ep.label_map,
                                              config.template_id));
    }
    ep.gold = static_cast<int>(rng.next_below(2));
    sample_x(ep.gold, used, x);
    ep.query = render_query(ctx.vocab, to_symbols(x), config.template_id);
    Fnv1a h;
    h.ints(w).ints(ep.label_map.label_ids);
    ep.mapping_fingerprint = h.digest();
    return ep;
  }
};

}  // namespace

Episode gen_episode(const TaskConfig& config, const TaskContext& ctx, int episode_index) {
  EpisodeBuilder builder{config, ctx,
                         Rng(derive_seed(config.seed, "episode",
                                         static_cast<uint64_t>(episode_index)))};
  if (config.family == TaskFamily::NoisyLinearThreshold) return builder.build_linear_episode();
  return builder.build_mapping_episode();
}

std::vector<Episode> gen_episodes(const TaskConfig& config, const TaskContext& ctx) {
  config.validate();
  std::vector<Episode> episodes;
  episodes.reserve(static_cast<size_t>(config.episodes));
  for (int i = 0; i < config.episodes; ++i) episodes.push_back(gen_episode(config, ctx, i));
  return episodes;
}

uint64_t episodes_fingerprint(const std::vector<Episode>& episodes) {
  Fnv1a h;
  for (const auto& ep : episodes) h.u64(ep.fingerprint());
  return h.digest();
}

}  // namespace slidemask
