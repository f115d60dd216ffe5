// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Subcommands: gen-corpus, train-target,
// train-prompt, evaluate, compare, verify.

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace memprobe {

enum ExitCode : int {
  kExitOk = 0,
  kExitIo = 1,
  kExitConfig = 2,
  kExitNumeric = 3,
};

/// Runs one command. `args` excludes the program name. Logs and tables go to
/// `out`, diagnostics to `err`. Returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace memprobe
