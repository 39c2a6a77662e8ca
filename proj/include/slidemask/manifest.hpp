// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace slidemask {

/// Reproduction record for one CLI run: resolved configuration, the seed
/// tree, and hashes of every artifact written. Timing lives here, never in
/// the deterministic result files.
struct RunManifest {
  std::string subcommand;
  std::string resolved_config_json;  // all defaults materialized
  uint64_t root_seed = 0;
  std::map<std::string, uint64_t> sub_seeds;
  std::vector<std::string> input_paths;
  std::map<std::string, std::string> artifact_hashes;  // file -> hex fnv64
  double wall_time_ms = 0.0;

  std::string to_json() const;
};

/// Buffers outputs and commits them all at once so failed runs never leave
/// partial files behind.
class OutputStager {
 public:
  explicit OutputStager(std::string out_dir);

  void stage(const std::string& filename, std::string content);
  bool staged(const std::string& filename) const;

  /// Writes every staged file plus manifest.json; creates the directory.
  void commit(RunManifest manifest);

  const std::string& out_dir() const { return out_dir_; }

 private:
  std::string out_dir_;
  std::vector<std::pair<std::string, std::string>> files_;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace slidemask
