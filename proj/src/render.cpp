// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#include "slidemask/render.hpp"

#include <stdexcept>

namespace slidemask {

RenderFormat render_format_from_name(const std::string& name) {
  if (name == "ascii") return RenderFormat::Ascii;
  if (name == "csv") return RenderFormat::Csv;
  if (name == "pgm") return RenderFormat::Pgm;
  throw std::invalid_argument("unknown render format: " + name);
}

std::string render_ascii(const AttentionMask& mask, const PromptLayout* layout) {
  const size_t n = mask.n();
  std::vector<size_t> boundaries;  // internal segment starts
  if (layout != nullptr) {
    for (const auto& seg : layout->segments) {
      if (seg.begin != 0) boundaries.push_back(seg.begin);
    }
  }
  auto is_boundary = [&](size_t pos) {
    for (size_t b : boundaries)
      if (b == pos) return true;
    return false;
  };

  std::string out;
  const size_t row_width = n + boundaries.size();
  for (size_t q = 0; q < n; ++q) {
    if (q != 0 && is_boundary(q)) {
      for (size_t c = 0; c < row_width; ++c) {
        out += '-';
      }
      out += '\n';
    }
    for (size_t k = 0; k < n; ++k) {
      if (k != 0 && is_boundary(k)) out += '|';
      out += mask.at(q, k) ? '#' : '.';
    }
    out += '\n';
  }
  return out;
}

std::string render_csv(const AttentionMask& mask) {
  std::string out;
  for (size_t q = 0; q < mask.n(); ++q) {
    for (size_t k = 0; k < mask.n(); ++k) {
      if (k) out += ',';
      out += mask.at(q, k) ? '1' : '0';
    }
    out += '\n';
  }
  return out;
}

std::string render_pgm(const AttentionMask& mask) {
  std::string out = "P2\n";
  out += std::to_string(mask.n()) + " " + std::to_string(mask.n()) + "\n255\n";
  for (size_t q = 0; q < mask.n(); ++q) {
    for (size_t k = 0; k < mask.n(); ++k) {
      if (k) out += ' ';
      out += mask.at(q, k) ? "255" : "0";
    }
    out += '\n';
  }
  return out;
}

std::string render_mask(const AttentionMask& mask, RenderFormat format,
                        const PromptLayout* layout) {
  switch (format) {
    case RenderFormat::Ascii:
      return render_ascii(mask, layout);
    case RenderFormat::Csv:
      return render_csv(mask);
    case RenderFormat::Pgm:
      return render_pgm(mask);
  }
  throw std::invalid_argument("unknown render format");
}

}  // namespace slidemask
