// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Built-in invariant checks run by the `verify` command.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace memprobe {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Gradient checks against finite differences, identity initialisation of
/// the generator, masked-loss locality and checkpoint round trips, all on
/// small randomly initialised models.
std::vector<CheckResult> run_invariant_suite(std::uint64_t seed = 0);

}  // namespace memprobe
