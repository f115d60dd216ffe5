// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace memprobe {

/// Keeps large freed buffers in the heap instead of returning them to the
/// OS. Training allocates the same activation sizes every step, and the
/// default glibc thresholds turn each of them into a fresh mmap plus page
/// faults. No-op on other C libraries.
void tune_allocator();

}  // namespace memprobe
