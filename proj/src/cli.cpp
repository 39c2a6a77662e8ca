// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#include "slidemask/cli.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "slidemask/errors.hpp"
#include "slidemask/harness.hpp"
#include "slidemask/hash.hpp"
#include "slidemask/kv_cache.hpp"
#include "slidemask/manifest.hpp"
#include "slidemask/render.hpp"
#include "slidemask/rng.hpp"

namespace slidemask {

namespace {

using Clock = std::chrono::steady_clock;

uint64_t resolve_root_seed(std::optional<uint64_t> flag_seed, uint64_t fallback) {
  if (flag_seed) return *flag_seed;
  if (const char* env = std::getenv("SLIDEMASK_SEED")) {
    return std::strtoull(env, nullptr, 10);
  }
  return fallback;
}

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

MaskSpec spec_for_method(const std::string& name, int k) {
  const MaskMethod method = method_from_name(name);
  switch (method) {
    case MaskMethod::Regular:
      return MaskSpec::regular(k);
    case MaskMethod::FullAttnV1:
      return MaskSpec::full_attn_v1(k);
    case MaskMethod::FullAttnV2:
      return MaskSpec::full_attn_v2(k);
    case MaskMethod::Rd:
      return MaskSpec::rd(k);
    case MaskMethod::RdSca:
      return MaskSpec::rdsca(k, k);
    case MaskMethod::RdScaNoSos:
      return MaskSpec::rdsca_no_sos(k, k);
  }
  throw std::invalid_argument("unknown method: " + name);
}

struct SpecFlags {
  std::string method = "rdsca";
  int k = 4;
  int w = 0;  // 0 = use K
  std::string dup = "causal_among_dups";
  std::string sos;  // derived from method unless set
  int query_last_n = 0;

  MaskSpec build() const {
    MaskSpec spec;
    spec.method = method_from_name(method);
    spec.k = k;
    spec.window_w = method_is_windowed(spec.method) ? (w > 0 ? w : k) : 0;
    spec.dup_policy = dup == "isolated_dups" ? DupPolicy::IsolatedDups
                                             : DupPolicy::CausalAmongDups;
    spec.sos_policy = spec.method == MaskMethod::RdScaNoSos ? SosPolicy::WindowOnly
                                                            : SosPolicy::AlwaysVisible;
    spec.query_policy =
        query_last_n > 0 ? QueryPolicy::last(query_last_n) : QueryPolicy::all();
    spec.validate();
    return spec;
  }
};

void add_spec_flags(CLI::App* cmd, SpecFlags& flags) {
  cmd->add_option("--method", flags.method,
                  "mask method: regular|full_attn_v1|full_attn_v2|rd|rdsca_no_sos|rdsca");
  cmd->add_option("--k", flags.k, "demonstration count K");
  cmd->add_option("--w", flags.w, "window size W in demonstrations (windowed methods)");
  cmd->add_option("--dup", flags.dup, "duplicate policy: causal_among_dups|isolated_dups");
  cmd->add_option("--query-last-n", flags.query_last_n,
                  "restrict the query window to the last N demonstrations");
}

// ============================================================================
// mask
// ============================================================================

struct MaskArgs {
  SpecFlags spec;
  size_t tokens_per_demo = 1;
  size_t query_tokens = 1;
  std::string format = "ascii";
  std::string out_dir = "slidemask_out/mask";
  bool print_windows = false;
};

int cmd_mask(const MaskArgs& args) {
  const auto start = Clock::now();
  const MaskSpec spec = args.spec.build();
  const LayoutVariant variant = method_uses_repeated_layout(spec.method)
                                    ? LayoutVariant::Repeated
                                    : LayoutVariant::Plain;
  const PromptLayout layout =
      synthetic_layout(variant, spec.k, args.tokens_per_demo, args.query_tokens);
  const AttentionMask mask = build_mask(spec, layout);
  const RenderFormat format = render_format_from_name(args.format);
  const std::string rendering = render_mask(mask, format, &layout);

  // Region-count summary over the full cell grid.
  const auto counts = region_counts(layout);
  std::string region_csv = "region,cells,visible_cells\n";
  for (Region r : kAllRegions) {
    size_t visible = 0;
    for (size_t q = 0; q < mask.n(); ++q)
      for (size_t k = 0; k < mask.n(); ++k)
        if (mask.at(q, k) && classify_region(layout, q, k) == r) ++visible;
    region_csv += region_name(r) + "," + std::to_string(counts[static_cast<size_t>(r)]) + "," +
                  std::to_string(visible) + "\n";
  }

  std::string windows_txt;
  if (method_is_windowed(spec.method)) {
    for (int i = 1; i <= spec.k; ++i) {
      const DemoWindow w = demo_window(spec, i);
      windows_txt += "window(ORIG" + std::to_string(i) + "):";
      for (const auto& role : w.segments) windows_txt += " " + role_name(role);
      windows_txt += w.sos_visible ? "  (+SOS)\n" : "\n";
    }
    const DemoWindow qw = query_window(spec);
    windows_txt += "window(QUERY):";
    for (const auto& role : qw.segments) windows_txt += " " + role_name(role);
    windows_txt += qw.sos_visible ? "  (+SOS)\n" : "\n";
  }

  const char* ext = format == RenderFormat::Ascii ? "txt"
                    : format == RenderFormat::Csv ? "csv"
                                                  : "pgm";
  OutputStager stager(args.out_dir);
  stager.stage(std::string("mask.") + ext, rendering);
  stager.stage("regions.csv", region_csv);
  stager.stage("layout.json", layout.to_json());
  stager.stage("spec.json", spec.to_json() + "\n");
  if (!windows_txt.empty()) stager.stage("windows.txt", windows_txt);

  RunManifest manifest;
  manifest.subcommand = "mask";
  nlohmann::ordered_json cfg;
  cfg["spec"] = nlohmann::json::parse(spec.to_json());
  cfg["tokens_per_demo"] = args.tokens_per_demo;
  cfg["query_tokens"] = args.query_tokens;
  cfg["format"] = args.format;
  manifest.resolved_config_json = cfg.dump();
  manifest.wall_time_ms =
      std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  stager.commit(manifest);

  std::printf("%s", rendering.c_str());
  if (args.print_windows && !windows_txt.empty()) std::printf("%s", windows_txt.c_str());
  std::printf("visible cells: %zu / %zu\n", mask.count(), mask.n() * mask.n());
  std::printf("outputs: %s\n", args.out_dir.c_str());
  return 0;
}

// ============================================================================
// train
// ============================================================================

struct TrainFileConfig {
  ModelConfig model;
  TaskConfig task;
  std::vector<int> train_k_values;
  SgdOptions sgd;

  static TrainFileConfig parse(const std::string& text, uint64_t root_seed) {
    const auto j = nlohmann::json::parse(text);
    TrainFileConfig c;
    const auto& jm = j.at("model");
    c.model.d_model = jm.value("d_model", 32);
    c.model.n_heads = jm.value("n_heads", 2);
    c.model.n_layers = jm.value("n_layers", 2);
    c.model.d_ff = jm.value("d_ff", 64);
    c.model.position_mode = position_mode_from_name(jm.value("position_mode", "relative_rotation"));
    c.model.max_positions = jm.value("max_positions", 256);
    c.model.seed = derive_seed(root_seed, "model");
    c.task = TaskConfig::from_json(j.at("task").dump());
    c.task.seed = derive_seed(root_seed, "corpus");
    if (j.contains("train_k_values"))
      c.train_k_values = j.at("train_k_values").get<std::vector<int>>();
    if (c.train_k_values.empty()) c.train_k_values = {c.task.k_shots};
    const auto& jo = j.at("optimizer");
    c.sgd.learning_rate = jo.value("learning_rate", 0.3);
    c.sgd.steps = jo.value("steps", int64_t{2000});
    c.sgd.batch_size = jo.value("batch_size", 16);
    c.sgd.heldout_fraction = jo.value("heldout_fraction", 0.05);
    c.sgd.log_every = jo.value("log_every", int64_t{100});
    c.sgd.seed = derive_seed(root_seed, "sgd");
    return c;
  }
};

/// Training sequences are plain prompts with the gold label appended, so a
/// causal LM objective supervises the label position among others.
std::vector<std::vector<int>> build_corpus(const TaskConfig& task, const TaskContext& ctx,
                                           const std::vector<int>& k_values) {
  std::vector<std::vector<int>> corpus;
  const int per_k = std::max(1, task.episodes / static_cast<int>(k_values.size()));
  for (size_t ki = 0; ki < k_values.size(); ++ki) {
    TaskConfig sub = task;
    sub.k_shots = k_values[ki];
    sub.episodes = per_k;
    sub.seed = derive_seed(task.seed, "corpus_k", static_cast<uint64_t>(k_values[ki]));
    sub.validate();
    for (const Episode& ep : gen_episodes(sub, ctx)) {
      PromptLayout layout = build_plain_layout(ep.demos, ep.query);
      std::vector<int> seq = std::move(layout.tokens);
      seq.push_back(ep.label_map.label_ids[static_cast<size_t>(ep.gold)]);
      corpus.push_back(std::move(seq));
    }
  }
  return corpus;
}

struct TrainArgs {
  std::string config_path;
  std::string out_dir = "slidemask_out/train";
  std::optional<uint64_t> seed;
  std::optional<int64_t> steps_override;
};

int cmd_train(const TrainArgs& args) {
  const auto start = Clock::now();
  const std::string config_text = read_file(args.config_path);
  const uint64_t root_seed = resolve_root_seed(
      args.seed, nlohmann::json::parse(config_text).value("seed", uint64_t{0}));
  TrainFileConfig cfg = TrainFileConfig::parse(config_text, root_seed);
  if (args.steps_override) cfg.sgd.steps = *args.steps_override;

  const TaskContext ctx = TaskContext::build(cfg.task);
  cfg.model.vocab_size = ctx.vocab.size();
  cfg.model.validate();

  const auto corpus = build_corpus(cfg.task, ctx, cfg.train_k_values);
  ModelState model = init_model(cfg.model);
  const TrainResult result = train_clm(model, corpus, cfg.sgd);

  std::string curve = "step,train_loss,heldout_loss\n";
  for (const auto& entry : result.log) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%lld,%.9f,%.9f\n", static_cast<long long>(entry.step),
                  entry.train_loss, entry.heldout_loss);
    curve += buf;
  }

  OutputStager stager(args.out_dir);
  stager.stage("checkpoint.bin", serialize_checkpoint(model, ctx.vocab.fingerprint()));
  stager.stage("loss_curve.csv", curve);
  stager.stage("vocab.json", ctx.vocab.to_json());

  RunManifest manifest;
  manifest.subcommand = "train";
  nlohmann::ordered_json resolved;
  resolved["model"] = nlohmann::json::parse(cfg.model.to_json());
  resolved["task"] = nlohmann::json::parse(cfg.task.to_json());
  resolved["train_k_values"] = cfg.train_k_values;
  resolved["optimizer"] = {{"learning_rate", cfg.sgd.learning_rate},
                           {"steps", cfg.sgd.steps},
                           {"batch_size", cfg.sgd.batch_size},
                           {"heldout_fraction", cfg.sgd.heldout_fraction},
                           {"log_every", cfg.sgd.log_every},
                           {"seed", cfg.sgd.seed}};
  manifest.resolved_config_json = resolved.dump();
  manifest.root_seed = root_seed;
  manifest.sub_seeds = {{"model", cfg.model.seed},
                        {"corpus", cfg.task.seed},
                        {"sgd", cfg.sgd.seed}};
  manifest.input_paths = {args.config_path};
  manifest.wall_time_ms =
      std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  stager.commit(manifest);

  std::printf("corpus: %zu sequences, model: %zu parameters\n", corpus.size(),
              model.parameter_count());
  std::printf("heldout loss: %.6f -> %.6f over %lld steps\n", result.initial_heldout_loss,
              result.final_heldout_loss, static_cast<long long>(cfg.sgd.steps));
  std::printf("outputs: %s\n", args.out_dir.c_str());
  return 0;
}

// ============================================================================
// eval
// ============================================================================

struct EvalArgs {
  std::string checkpoint_path;
  std::string task_path;
  std::string methods = "regular,rd,rdsca";
  std::string w_sweep;
  std::string k_sweep;
  bool probe = false;
  int seeds = 1;
  int jobs = 1;
  std::string position_policy = "absolute";
  std::string out_dir = "slidemask_out/eval";
  std::optional<uint64_t> seed;
  std::optional<int> episodes_override;
};

int cmd_eval(const EvalArgs& args) {
  const auto start = Clock::now();
  const Checkpoint ck = load_checkpoint(args.checkpoint_path);
  TaskConfig task = TaskConfig::load(args.task_path);
  if (args.episodes_override) task.episodes = *args.episodes_override;
  const uint64_t root_seed = resolve_root_seed(args.seed, task.seed);
  const TaskContext ctx = TaskContext::build(task);
  if (ctx.vocab.fingerprint() != ck.vocab_fingerprint ||
      ctx.vocab.size() != ck.model.config.vocab_size) {
    throw std::invalid_argument(
        "eval: task vocabulary does not match the checkpoint (wrong task config?)");
  }

  EvalOptions options;
  options.position_policy = position_policy_from_name(args.position_policy);
  options.jobs = args.jobs;

  std::vector<MaskSpec> method_specs;
  for (const auto& name : split_csv(args.methods))
    method_specs.push_back(spec_for_method(name, task.k_shots));

  const double chance = 1.0 / task.n_classes;
  std::vector<EvalRecord> all_records;
  std::string tables;
  RunManifest manifest;
  manifest.subcommand = "eval";
  manifest.root_seed = root_seed;

  for (int s = 0; s < args.seeds; ++s) {
    TaskConfig seeded = task;
    seeded.seed = derive_seed(root_seed, "episodes", static_cast<uint64_t>(s));
    manifest.sub_seeds["episodes_" + std::to_string(s)] = seeded.seed;
    auto records = run_matrix(ck.model, method_specs, seeded, ctx, options);
    if (s == 0) {
      tables += "## Method matrix (seed 0)\n\n";
      tables += markdown_method_table(records, chance);
      tables += "\n";
    }
    for (auto& r : records) all_records.push_back(std::move(r));
  }

  if (!args.w_sweep.empty() && task.k_shots >= 1) {
    std::vector<MaskSpec> sweep_specs;
    sweep_specs.push_back(MaskSpec::regular(task.k_shots));
    for (const auto& wtext : split_csv(args.w_sweep)) {
      const int w = std::stoi(wtext);
      sweep_specs.push_back(MaskSpec::rdsca(task.k_shots, w));
    }
    if (task.k_shots >= 2) {
      // Window = K with the query restricted to the last K-1 demonstrations.
      sweep_specs.push_back(MaskSpec::rdsca(task.k_shots, task.k_shots,
                                            DupPolicy::CausalAmongDups,
                                            QueryPolicy::last(task.k_shots - 1)));
    }
    TaskConfig seeded = task;
    seeded.seed = derive_seed(root_seed, "w_sweep");
    manifest.sub_seeds["w_sweep"] = seeded.seed;
    auto records = run_matrix(ck.model, sweep_specs, seeded, ctx, options);
    tables += "## Window sweep\n\n";
    tables += markdown_method_table(records, chance);
    tables += "\n";
    for (auto& r : records) all_records.push_back(std::move(r));
  }

  if (!args.k_sweep.empty()) {
    std::vector<int> ks;
    for (const auto& ktext : split_csv(args.k_sweep)) ks.push_back(std::stoi(ktext));
    TaskConfig seeded = task;
    seeded.seed = derive_seed(root_seed, "k_sweep");
    manifest.sub_seeds["k_sweep"] = seeded.seed;
    auto cells = shot_sweep(ck.model, ks, method_specs, seeded, options);
    tables += "## Shot sweep\n\n";
    tables += markdown_sweep_table(cells);
    tables += "\n";
    for (auto& cell : cells) {
      if (!cell.skipped_reason) all_records.push_back(std::move(cell.record));
    }
  }

  if (args.probe && task.k_shots >= 1) {
    std::vector<MaskSpec> probe_specs;
    probe_specs.push_back(MaskSpec::rd(task.k_shots));
    probe_specs.push_back(MaskSpec::rdsca(task.k_shots, task.k_shots));
    probe_specs.push_back(MaskSpec::rdsca(task.k_shots, 1, DupPolicy::IsolatedDups));
    TaskConfig seeded = task;
    seeded.episodes = std::min(task.episodes, 200);
    seeded.seed = derive_seed(root_seed, "probe");
    manifest.sub_seeds["probe"] = seeded.seed;
    auto probes = duplicate_probe(ck.model, probe_specs, seeded, ctx, options.position_policy);
    tables += "## Duplicate-label probe\n\n";
    tables += markdown_probe_table(probes);
    tables += "\n";
  }

  // Chance-floor diagnostics: flag any record outside the 99% interval.
  const BinomialInterval floor99 = binomial_interval(chance, task.episodes, 2.5758);
  tables += "## Chance-floor diagnostics\n\n";
  tables += "chance = " + std::to_string(chance) + ", 99% interval = [" +
            std::to_string(floor99.low) + ", " + std::to_string(floor99.high) + "]\n\n";
  for (const auto& r : all_records) {
    if (r.episodes != task.episodes) continue;
    const double acc = r.accuracy();
    if (acc > floor99.high) {
      tables += "- " + spec_label(r.spec) + " scores above the interval (" +
                std::to_string(acc) + ") — expected for trained models\n";
    } else if (acc < floor99.low) {
      tables += "- " + spec_label(r.spec) + " scores below the interval (" +
                std::to_string(acc) + ")\n";
    }
  }

  OutputStager stager(args.out_dir);
  stager.stage("results.csv", records_to_csv(all_records, task));
  stager.stage("tables.md", tables);

  nlohmann::ordered_json resolved;
  resolved["checkpoint"] = args.checkpoint_path;
  resolved["task"] = nlohmann::json::parse(task.to_json());
  resolved["methods"] = args.methods;
  resolved["w_sweep"] = args.w_sweep;
  resolved["k_sweep"] = args.k_sweep;
  resolved["probe"] = args.probe;
  resolved["seeds"] = args.seeds;
  resolved["jobs"] = args.jobs;
  resolved["position_policy"] = args.position_policy;
  manifest.resolved_config_json = resolved.dump();
  manifest.input_paths = {args.checkpoint_path, args.task_path};
  manifest.wall_time_ms =
      std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  stager.commit(manifest);

  std::printf("%s", tables.c_str());
  std::printf("records: %zu, outputs: %s\n", all_records.size(), args.out_dir.c_str());
  return 0;
}

// ============================================================================
// bench
// ============================================================================

struct BenchArgs {
  std::string checkpoint_path;
  std::string task_path;
  SpecFlags spec;
  std::string retention = "window_only";
  int episodes = 5;
  std::string position_policy = "absolute";
  std::string out_dir = "slidemask_out/bench";
  std::optional<uint64_t> seed;
};

int cmd_bench(const BenchArgs& args) {
  const auto start = Clock::now();
  const Checkpoint ck = load_checkpoint(args.checkpoint_path);
  TaskConfig task = TaskConfig::load(args.task_path);
  task.k_shots = args.spec.k;
  task.episodes = args.episodes;
  const uint64_t root_seed = resolve_root_seed(args.seed, task.seed);
  task.seed = derive_seed(root_seed, "bench_episodes");
  task.validate();
  const TaskContext ctx = TaskContext::build(task);
  if (ctx.vocab.fingerprint() != ck.vocab_fingerprint)
    throw std::invalid_argument("bench: task vocabulary does not match the checkpoint");

  const MaskSpec spec = args.spec.build();
  const RetentionPolicy retention = retention_from_name(args.retention);
  const PositionPolicy policy = position_policy_from_name(args.position_policy);

  double max_dev = 0.0;
  MemoryReport report_spec{};
  MemoryReport report_regular{};
  for (const Episode& ep : gen_episodes(task, ctx)) {
    const PromptLayout layout = method_uses_repeated_layout(spec.method)
                                    ? build_repeated_layout(ep.demos, ep.query)
                                    : build_plain_layout(ep.demos, ep.query);
    const AttentionMask mask = build_mask(spec, layout);
    const std::vector<int> positions = assign_positions(policy, spec, layout);

    const ForwardTrace monolithic = forward(ck.model, layout.tokens, mask, positions);
    PrefillResult pre = prefill(ck.model, layout, mask, spec, positions, retention);
    report_spec = pre.cache.memory_report();  // post-prefill state, before query steps
    const auto query_logits = decode_query(pre.cache, ck.model, layout, mask, positions);

    const Segment& query = layout.find_segment(SegmentRole::query());
    for (size_t qi = 0; qi < query_logits.size(); ++qi) {
      const auto mono_row = monolithic.logits_at(query.begin + qi);
      for (size_t i = 0; i < query_logits[qi].size(); ++i)
        max_dev = std::max(max_dev, std::abs(mono_row[i] - query_logits[qi][i]));
    }

    // Regular-ICL baseline over the same demos, for the parity comparison.
    const MaskSpec regular = MaskSpec::regular(spec.k);
    const PromptLayout plain = build_plain_layout(ep.demos, ep.query);
    const AttentionMask plain_mask = build_mask(regular, plain);
    PrefillResult plain_pre =
        prefill(ck.model, plain, plain_mask, regular,
                assign_positions(PositionPolicy::Absolute, regular, plain),
                RetentionPolicy::Full);
    report_regular = plain_pre.cache.memory_report();
  }

  std::string report;
  report += "spec: " + spec.to_json() + "\n";
  report += "retention: " + retention_name(retention) + "\n";
  report += "episodes: " + std::to_string(args.episodes) + "\n";
  char buf[96];
  std::snprintf(buf, sizeof(buf), "max incremental deviation: %.3e\n", max_dev);
  report += buf;
  report += "retained prefix entries (spec): sos=" + std::to_string(report_spec.sos) +
            " dup=" + std::to_string(report_spec.dup) +
            " orig=" + std::to_string(report_spec.orig) +
            " total=" + std::to_string(report_spec.total()) +
            " peak=" + std::to_string(report_spec.peak_entries_per_layer) + "\n";
  report += "retained prefix entries (regular): total=" + std::to_string(report_regular.total()) +
            "\n";

  OutputStager stager(args.out_dir);
  stager.stage("bench_report.txt", report);
  RunManifest manifest;
  manifest.subcommand = "bench";
  manifest.root_seed = root_seed;
  manifest.sub_seeds = {{"bench_episodes", task.seed}};
  nlohmann::ordered_json resolved;
  resolved["spec"] = nlohmann::json::parse(spec.to_json());
  resolved["retention"] = args.retention;
  resolved["episodes"] = args.episodes;
  resolved["position_policy"] = args.position_policy;
  manifest.resolved_config_json = resolved.dump();
  manifest.input_paths = {args.checkpoint_path, args.task_path};
  manifest.wall_time_ms =
      std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  stager.commit(manifest);

  std::printf("%s", report.c_str());
  if (max_dev > 1e-5) {
    std::fprintf(stderr, "bench: incremental deviation %.3e exceeds 1e-5\n", max_dev);
    return 2;
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"sliding-window causal attention masks for repeated-demonstration prompts"};
  app.require_subcommand(1);

  MaskArgs mask_args;
  auto* mask_cmd = app.add_subcommand("mask", "build, analyse and render an attention mask");
  add_spec_flags(mask_cmd, mask_args.spec);
  mask_cmd->add_option("--tokens-per-demo", mask_args.tokens_per_demo);
  mask_cmd->add_option("--query-tokens", mask_args.query_tokens);
  mask_cmd->add_option("--format", mask_args.format, "ascii|csv|pgm");
  mask_cmd->add_option("--out-dir", mask_args.out_dir);
  mask_cmd->add_flag("--windows", mask_args.print_windows, "print per-demo window listings");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train the toy causal LM on synthetic episodes");
  train_cmd->add_option("--config", train_args.config_path)->required();
  train_cmd->add_option("--out-dir", train_args.out_dir);
  train_cmd->add_option("--seed", train_args.seed, "root seed (overrides config and env)");
  train_cmd->add_option("--steps", train_args.steps_override, "override optimizer steps");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "run the mask-method evaluation matrix");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint_path)->required();
  eval_cmd->add_option("--task", eval_args.task_path)->required();
  eval_cmd->add_option("--methods", eval_args.methods);
  eval_cmd->add_option("--w-sweep", eval_args.w_sweep, "comma list of window sizes");
  eval_cmd->add_option("--k-sweep", eval_args.k_sweep, "comma list of demo counts");
  eval_cmd->add_flag("--probe", eval_args.probe, "run the duplicate-label probe");
  eval_cmd->add_option("--seeds", eval_args.seeds);
  eval_cmd->add_option("--jobs", eval_args.jobs);
  eval_cmd->add_option("--position-policy", eval_args.position_policy,
                       "absolute|window_local");
  eval_cmd->add_option("--episodes", eval_args.episodes_override);
  eval_cmd->add_option("--out-dir", eval_args.out_dir);
  eval_cmd->add_option("--seed", eval_args.seed);

  BenchArgs bench_args;
  auto* bench_cmd =
      app.add_subcommand("bench", "verify incremental decoding and cache memory parity");
  bench_cmd->add_option("--checkpoint", bench_args.checkpoint_path)->required();
  bench_cmd->add_option("--task", bench_args.task_path)->required();
  add_spec_flags(bench_cmd, bench_args.spec);
  bench_cmd->add_option("--retention", bench_args.retention, "full|window_only");
  bench_cmd->add_option("--episodes", bench_args.episodes);
  bench_cmd->add_option("--position-policy", bench_args.position_policy);
  bench_cmd->add_option("--out-dir", bench_args.out_dir);
  bench_cmd->add_option("--seed", bench_args.seed);

  std::vector<const char*> argv;
  argv.push_back("slidemask");
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
    if (mask_cmd->parsed()) return cmd_mask(mask_args);
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (eval_cmd->parsed()) return cmd_eval(eval_args);
    if (bench_cmd->parsed()) return cmd_bench(bench_args);
    return 1;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const gate_error& e) {
    std::fprintf(stderr, "error (correctness gate): %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace slidemask
