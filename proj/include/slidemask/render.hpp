// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#pragma once

#include <string>

#include "slidemask/mask.hpp"

namespace slidemask {

enum class RenderFormat : uint8_t { Ascii, Csv, Pgm };

RenderFormat render_format_from_name(const std::string& name);

/// Byte-deterministic mask renderings.
///   ascii: '#' visible, '.' hidden; with a layout, segment boundaries get
///          '|' column and '-'/'+' row rulers.
///   csv:   0/1 grid, comma separated.
///   pgm:   P2 grayscale, 0 = hidden, 255 = visible.
std::string render_mask(const AttentionMask& mask, RenderFormat format,
                        const PromptLayout* layout = nullptr);

std::string render_ascii(const AttentionMask& mask, const PromptLayout* layout = nullptr);
std::string render_csv(const AttentionMask& mask);
std::string render_pgm(const AttentionMask& mask);

}  // namespace slidemask
