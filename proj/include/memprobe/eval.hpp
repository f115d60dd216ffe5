// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Greedy suffix generation, extraction-rate metrics and comparison reports.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "memprobe/corpus.hpp"
#include "memprobe/prompt.hpp"
#include "memprobe/transformer.hpp"

namespace memprobe {

/// Greedy decoding over a batch of equal-length embedded inputs
/// [batch * T0 x d]. Each step re-runs the full forward pass and appends the
/// argmax token (ties go to the lowest id). Throws GenerationError when
/// T0 + steps exceeds max_seq_len or steps < 1.
std::vector<std::vector<TokenId>> greedy_generate(const TargetLM& target, const Tensor& input_embeds,
                                                  std::int64_t batch, std::int64_t steps);

std::vector<TokenId> greedy_generate(const TargetLM& target, const Tensor& input_embeds,
                                     std::int64_t steps);

/// 1 when every position agrees. Throws ComparisonError on length mismatch
/// or empty input.
int exact_match(std::span<const TokenId> generated, std::span<const TokenId> truth);

enum class FractionalMode { positionwise, prefix };

std::string to_string(FractionalMode mode);
FractionalMode parse_fractional_mode(const std::string& name);

/// positionwise: share of positions that agree. prefix: length of the
/// longest agreeing prefix divided by the suffix length.
double fractional_match(std::span<const TokenId> generated, std::span<const TokenId> truth,
                        FractionalMode mode = FractionalMode::positionwise);

/// 100 * (value - baseline) / baseline; empty when baseline is zero.
std::optional<double> relative_gain(double value, double baseline);

struct ExtractionOutcome {
  std::int64_t sequence_id = 0;
  std::vector<TokenId> generated;
  bool exact = false;
  double fractional = 0;
};

struct TierBreakdown {
  std::int64_t dup_count = 0;
  std::int64_t n = 0;
  double exact_er = 0;
  double fractional_er = 0;
};

inline constexpr int kReportFormatVersion = 1;

struct ExtractionReport {
  std::string method;
  double exact_er = 0;
  double fractional_er = 0;
  double test_loss = 0;
  double test_ppl = 0;
  std::int64_t n_test = 0;
  std::uint64_t seed = 0;
  std::vector<TierBreakdown> per_tier;
  std::optional<double> exact_gain_pct;
  std::optional<double> fractional_gain_pct;
  std::vector<ExtractionOutcome> outcomes;
};

struct EvalConfig {
  std::int64_t prefix_len = 24;
  std::int64_t suffix_len = 24;
  FractionalMode fractional_mode = FractionalMode::positionwise;
  /// Worker threads; 0 means the MEMPROBE_THREADS / hardware default.
  std::int64_t threads = 0;
  /// Sequences per work item. Results do not depend on it or on threads.
  std::int64_t chunk_size = 20;
  std::uint64_t seed = 0;

  void validate(std::int64_t seq_len) const;
};

nlohmann::json to_json(const EvalConfig& config);

/// Worker count from MEMPROBE_THREADS, else the hardware concurrency.
/// Throws ConfigError for a malformed value.
std::int64_t default_thread_count();

/// Scores one method on `test_ids`. Never mutates a model.
ExtractionReport evaluate_method(const ExtractionMethod& method, const TargetLM& target,
                                 const Corpus& corpus, std::span<const std::int64_t> test_ids,
                                 const EvalConfig& config);

/// Evaluates every method and fills gains against the none method, which
/// must be present (ComparisonError otherwise). Report order follows
/// `methods`.
std::vector<ExtractionReport> compare_all(const TargetLM& target, const Corpus& corpus,
                                          std::span<const ExtractionMethod> methods,
                                          std::span<const std::int64_t> test_ids,
                                          const EvalConfig& config);

/// Fills gains of `reports` against the report named "none".
void apply_gains(std::vector<ExtractionReport>& reports);

/// Report JSON without the per-sequence outcomes.
nlohmann::json to_json(const ExtractionReport& report);
/// One header line plus one row per report, 6 decimals.
std::string comparison_csv(std::span<const ExtractionReport> reports);
/// Fixed-width text table for terminals.
std::string format_table(std::span<const ExtractionReport> reports);

}  // namespace memprobe
