// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#include "slidemask/vocab.hpp"

#include <fstream>
#include <map>
#include <stdexcept>

#include "json.hpp"
#include "slidemask/hash.hpp"
#include "slidemask/manifest.hpp"

namespace slidemask {

Vocabulary::Vocabulary() {
  intern("<SOS>");
  intern("<UNK>");
}

int Vocabulary::intern(const std::string& token) {
  auto it = ids_.find(token);
  if (it != ids_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

int Vocabulary::id_of(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

std::optional<int> Vocabulary::find(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::token_of(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("Vocabulary::token_of: bad id");
  return tokens_[static_cast<size_t>(id)];
}

uint64_t Vocabulary::fingerprint() const {
  Fnv1a h;
  for (const auto& t : tokens_) {
    h.str(t);
    h.u64(0x1f);
  }
  return h.digest();
}

std::string Vocabulary::to_json() const {
  // Ordered by id so the export is canonical.
  nlohmann::ordered_json j;
  for (size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = i;
  return j.dump(2) + "\n";
}

Vocabulary Vocabulary::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  std::map<int, std::string> by_id;
  for (auto it = j.begin(); it != j.end(); ++it) {
    by_id[it.value().get<int>()] = it.key();
  }
  Vocabulary v;
  for (const auto& [id, token] : by_id) {
    if (id == kSos || id == kUnk) {
      if (v.token_of(id) != token)
        throw std::invalid_argument("vocabulary file: reserved id " + std::to_string(id) +
                                    " must be " + v.token_of(id));
      continue;
    }
    if (id != v.size())
      throw std::invalid_argument("vocabulary file: ids must be dense, missing id " +
                                  std::to_string(v.size()));
    v.intern(token);
  }
  return v;
}

void Vocabulary::save(const std::string& path) const { write_file(path, to_json()); }

Vocabulary Vocabulary::load(const std::string& path) { return from_json(read_file(path)); }

}  // namespace slidemask
