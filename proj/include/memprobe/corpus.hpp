// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic corpus of random token sequences with tiered duplication, plus
// prefix/suffix splitting and disjoint train/test sampling.

#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "json.hpp"
#include "memprobe/ops.hpp"

namespace memprobe {

struct DupTier {
  std::int64_t count = 0;         // unique sequences in the tier
  std::int64_t multiplicity = 1;  // appearances of each in the training stream

  bool operator==(const DupTier&) const = default;
};

struct CorpusSequence {
  std::int64_t id = 0;
  std::vector<TokenId> tokens;
  std::int64_t dup_count = 1;
};

struct SplitSets {
  std::vector<std::int64_t> train_ids;
  std::vector<std::int64_t> test_ids;
};

struct Corpus {
  std::int64_t vocab_size = 0;
  std::int64_t seq_len = 0;
  std::uint64_t seed = 0;
  std::vector<CorpusSequence> sequences;  // sequences[i].id == i
  SplitSets splits;

  const CorpusSequence& sequence(std::int64_t id) const;
  /// Distinct dup counts in ascending order.
  std::vector<std::int64_t> dup_tiers() const;
  /// FNV-1a over the serialized form.
  std::uint64_t checksum() const;
};

inline constexpr int kCorpusFormatVersion = 1;

/// Tiers are assigned in order: the first tiers[0].count sequences get
/// tiers[0].multiplicity, and so on.
Corpus generate_corpus(std::int64_t vocab_size, std::int64_t n_unique, std::int64_t seq_len,
                       std::span<const DupTier> tiers, std::uint64_t seed);

struct SequenceSplit {
  std::vector<TokenId> prefix;
  std::vector<TokenId> suffix;
  std::int64_t origin_id = 0;
};

SequenceSplit split_sequence(std::span<const TokenId> tokens, std::int64_t prefix_len,
                             std::int64_t origin_id = 0);

/// Disjoint samples without replacement, stratified across dup tiers by
/// largest-remainder apportionment. Id lists come back sorted.
SplitSets sample_splits(const Corpus& corpus, std::int64_t n_train, std::int64_t n_test,
                        std::uint64_t seed);

/// Each sequence id repeated dup_count times, shuffled with `rng`.
std::vector<std::int64_t> training_stream(const Corpus& corpus, std::mt19937_64& rng);

nlohmann::json to_json(const Corpus& corpus);
Corpus corpus_from_json(const nlohmann::json& j);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);

}  // namespace memprobe
