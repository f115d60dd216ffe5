// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Pretraining of the target model on the duplicated corpus stream.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "memprobe/adam.hpp"
#include "memprobe/corpus.hpp"
#include "memprobe/transformer.hpp"

namespace memprobe {

/// Source of the tokens placed in front of a sequence in offset batches.
/// random: uniform token ids. packed: the tail of the sequence that precedes
/// it in the shuffled stream, as when documents are packed into one context.
enum class FillerMode { random, packed };

std::string to_string(FillerMode mode);
/// Throws ConfigError for unknown names.
FillerMode parse_filler_mode(const std::string& name);

struct TargetTrainConfig {
  std::int64_t max_epochs = 12;
  std::int64_t batch_size = 32;
  double lr = 2e-3;
  double clip_norm = 1.0;
  /// Stop once teacher-forced accuracy on the most duplicated tier reaches
  /// this value; values <= 0 always run max_epochs.
  double stop_accuracy = 0.99;
  /// The stop rule is only consulted from this epoch on.
  std::int64_t min_epochs = 8;
  /// Fraction of sequences preceded by filler tokens, and the largest
  /// filler length. Keeps recall robust to context placed in front of a
  /// prefix.
  double offset_fraction = 0.5;
  std::int64_t max_offset = 16;
  FillerMode filler = FillerMode::random;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const TargetTrainConfig& config);

struct TargetEpochLog {
  std::int64_t epoch = 0;  // 1-based, continues across resumes
  double train_loss = 0;
  double top_tier_accuracy = 0;
  double seconds = 0;
};

struct TargetTrainResult {
  std::vector<TargetEpochLog> epochs;
  std::int64_t epochs_completed = 0;
  bool reached_stop_accuracy = false;
};

/// Teacher-forced next-token accuracy at offset 0 over the given sequences.
double teacher_forced_accuracy(const TargetLM& lm, const Corpus& corpus,
                               std::span<const std::int64_t> ids);

/// Ids of the most duplicated tier.
std::vector<std::int64_t> top_tier_ids(const Corpus& corpus);

/// Trains `lm` in place. `start_epoch` is the number of epochs already
/// completed (for resumed runs); the epoch RNG is derived from the seed and
/// the epoch number so a resumed run sees the same data order. Throws
/// TrainingError on a non-finite loss.
TargetTrainResult train_target(TargetLM& lm, const Corpus& corpus, const TargetTrainConfig& config,
                               std::int64_t start_epoch = 0,
                               const std::function<void(const TargetEpochLog&)>& on_epoch = {});

}  // namespace memprobe
