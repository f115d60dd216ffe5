// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <string>
#include <vector>

#include "memprobe/cli.hpp"
#include "memprobe/runtime.hpp"

int main(int argc, char** argv) {
  memprobe::tune_allocator();
  std::vector<std::string> args(argv + 1, argv + argc);
  return memprobe::run_cli(args, std::cout, std::cerr);
}
