// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#pragma once

#include <string>
#include <vector>

namespace slidemask {

/// Entry point shared by the binary and the test suite.
/// Exit codes: 0 success, 1 usage/config error, 2 correctness-gate failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace slidemask
