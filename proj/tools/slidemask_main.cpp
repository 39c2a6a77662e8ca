// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Slidemask Authors

#include <string>
#include <vector>

#include "slidemask/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return slidemask::run_cli(args);
}
