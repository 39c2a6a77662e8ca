// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#include "slidemask/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "slidemask/hash.hpp"

namespace slidemask {

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["subcommand"] = subcommand;
  j["config"] = nlohmann::json::parse(resolved_config_json.empty() ? "{}"
                                                                   : resolved_config_json);
  j["root_seed"] = root_seed;
  nlohmann::ordered_json seeds;
  for (const auto& [name, seed] : sub_seeds) seeds[name] = seed;
  j["sub_seeds"] = seeds;
  j["input_paths"] = input_paths;
  nlohmann::ordered_json hashes;
  for (const auto& [file, hash] : artifact_hashes) hashes[file] = hash;
  j["artifact_hashes"] = hashes;
  j["wall_time_ms"] = wall_time_ms;
  return j.dump(2) + "\n";
}

OutputStager::OutputStager(std::string out_dir) : out_dir_(std::move(out_dir)) {}

void OutputStager::stage(const std::string& filename, std::string content) {
  for (auto& [name, body] : files_) {
    if (name == filename) {
      body = std::move(content);
      return;
    }
  }
  files_.emplace_back(filename, std::move(content));
}

bool OutputStager::staged(const std::string& filename) const {
  for (const auto& [name, body] : files_)
    if (name == filename) return true;
  return false;
}

void OutputStager::commit(RunManifest manifest) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir_);
  for (const auto& [name, body] : files_) {
    manifest.artifact_hashes[name] = hex64(hash_string(body));
    write_file((fs::path(out_dir_) / name).string(), body);
  }
  write_file((fs::path(out_dir_) / "manifest.json").string(), manifest.to_json());
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw std::runtime_error("error while reading: " + path);
  return content;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error("error while writing: " + path);
}

}  // namespace slidemask
