// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "memprobe/target_training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "memprobe/error.hpp"

namespace memprobe {

std::string to_string(FillerMode mode) { return mode == FillerMode::packed ? "packed" : "random"; }

FillerMode parse_filler_mode(const std::string& name) {
  if (name == "random") return FillerMode::random;
  if (name == "packed") return FillerMode::packed;
  throw ConfigError("unknown filler mode '" + name + "' (expected random or packed)");
}

void TargetTrainConfig::validate() const {
  if (max_epochs < 0) throw ConfigError("target epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("target batch size must be >= 1");
  if (!(lr > 0)) throw ConfigError("target learning rate must be > 0");
  if (!(clip_norm > 0)) throw ConfigError("target clip norm must be > 0");
  if (offset_fraction < 0 || offset_fraction > 1) {
    throw ConfigError("offset fraction must lie in [0, 1]");
  }
  if (max_offset < 0) throw ConfigError("max offset must be >= 0");
  if (min_epochs < 0) throw ConfigError("min epochs must be >= 0");
}

nlohmann::json to_json(const TargetTrainConfig& c) {
  return {{"max_epochs", c.max_epochs},         {"batch_size", c.batch_size},
          {"lr", c.lr},                         {"clip_norm", c.clip_norm},
          {"stop_accuracy", c.stop_accuracy},   {"min_epochs", c.min_epochs},
          {"offset_fraction", c.offset_fraction},
          {"max_offset", c.max_offset},         {"filler", to_string(c.filler)},
          {"seed", c.seed}};
}

namespace {

/// Lowest index among the maximal entries.
std::int64_t argmax_row(std::span<const float> row) {
  std::int64_t best = 0;
  for (std::int64_t j = 1; j < static_cast<std::int64_t>(row.size()); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

}  // namespace

std::vector<std::int64_t> top_tier_ids(const Corpus& corpus) {
  std::int64_t top = 0;
  for (const auto& s : corpus.sequences) top = std::max(top, s.dup_count);
  std::vector<std::int64_t> ids;
  for (const auto& s : corpus.sequences) {
    if (s.dup_count == top) ids.push_back(s.id);
  }
  return ids;
}

double teacher_forced_accuracy(const TargetLM& lm, const Corpus& corpus,
                               std::span<const std::int64_t> ids) {
  if (ids.empty()) return 0.0;
  constexpr std::size_t kChunk = 32;
  const std::int64_t L = corpus.seq_len;
  const std::int64_t V = lm.config.vocab_size;
  std::int64_t correct = 0;
  std::int64_t total = 0;
  for (std::size_t begin = 0; begin < ids.size(); begin += kChunk) {
    const std::size_t n = std::min(kChunk, ids.size() - begin);
    std::vector<TokenId> tokens;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& seq = corpus.sequence(ids[begin + i]).tokens;
      tokens.insert(tokens.end(), seq.begin(), seq.end());
    }
    const auto logits = forward_tokens(lm, tokens, static_cast<std::int64_t>(n));
    const auto data = logits.data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::int64_t t = 0; t + 1 < L; ++t) {
        const std::int64_t row = static_cast<std::int64_t>(i) * L + t;
        const auto pred = argmax_row(data.subspan(row * V, V));
        correct += pred == tokens[row + 1];
        ++total;
      }
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

TargetTrainResult train_target(TargetLM& lm, const Corpus& corpus, const TargetTrainConfig& config,
                               std::int64_t start_epoch,
                               const std::function<void(const TargetEpochLog&)>& on_epoch) {
  config.validate();
  if (corpus.vocab_size > lm.config.vocab_size) {
    throw ConfigError("corpus vocabulary " + std::to_string(corpus.vocab_size) +
                      " exceeds model vocabulary " + std::to_string(lm.config.vocab_size));
  }
  if (corpus.seq_len + config.max_offset > lm.config.max_seq_len) {
    throw ConfigError("sequence length plus max offset exceeds the model's max_seq_len");
  }
  if (config.filler == FillerMode::packed && config.max_offset > corpus.seq_len) {
    throw ConfigError("packed filler needs max offset <= the corpus sequence length");
  }
  lm.set_trainable(true);
  auto params = lm.parameters();
  AdamConfig adam;
  adam.learning_rate = config.lr;
  auto state = AdamState::for_parameters(params, adam);
  const auto top_ids = top_tier_ids(corpus);
  const std::int64_t L = corpus.seq_len;

  TargetTrainResult result;
  result.epochs_completed = start_epoch;
  double last_finite = std::nan("");
  for (std::int64_t epoch = start_epoch + 1; epoch <= config.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::seed_seq seq{config.seed, static_cast<std::uint64_t>(epoch)};
    std::mt19937_64 rng(seq);
    const auto stream = training_stream(corpus, rng);
    std::bernoulli_distribution use_offset(config.offset_fraction);
    std::uniform_int_distribution<std::int64_t> offset_len(1, std::max<std::int64_t>(config.max_offset, 1));
    std::uniform_int_distribution<TokenId> filler(0, static_cast<TokenId>(corpus.vocab_size - 1));

    double loss_sum = 0;
    std::int64_t loss_tokens = 0;
    for (std::size_t begin = 0; begin < stream.size();
         begin += static_cast<std::size_t>(config.batch_size)) {
      const auto n = static_cast<std::int64_t>(
          std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), stream.size() - begin));
      const std::int64_t offset =
          config.max_offset > 0 && use_offset(rng) ? offset_len(rng) : 0;
      const std::int64_t T = offset + L;
      std::vector<TokenId> tokens;
      tokens.reserve(static_cast<std::size_t>(n * T));
      for (std::int64_t i = 0; i < n; ++i) {
        const std::size_t at = begin + static_cast<std::size_t>(i);
        if (config.filler == FillerMode::packed) {
          const auto& prev = corpus.sequence(stream[(at + stream.size() - 1) % stream.size()]).tokens;
          tokens.insert(tokens.end(), prev.end() - offset, prev.end());
        } else {
          for (std::int64_t t = 0; t < offset; ++t) tokens.push_back(filler(rng));
        }
        const auto& s = corpus.sequence(stream[at]).tokens;
        tokens.insert(tokens.end(), s.begin(), s.end());
      }
      std::vector<TokenId> targets(tokens.size(), 0);
      std::vector<std::uint8_t> mask(tokens.size(), 0);
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t t = offset; t + 1 < T; ++t) {
          targets[i * T + t] = tokens[i * T + t + 1];
          mask[i * T + t] = 1;
        }
      }

      Tape tape;
      double batch_loss = 0;
      {
        TapeScope<float> scope(tape);
        auto loss = masked_cross_entropy(forward_tokens(lm, tokens, n), targets, mask);
        batch_loss = loss.item();
        if (!std::isfinite(batch_loss)) {
          throw TrainingError("target training diverged in epoch " + std::to_string(epoch),
                              last_finite);
        }
        tape.backward(loss);
      }
      last_finite = batch_loss;
      clip_grad_norm<float>(params, config.clip_norm);
      adam_step<float>(params, state);
      zero_grads<float>(params);
      const std::int64_t masked = n * (L - 1);
      loss_sum += batch_loss * static_cast<double>(masked);
      loss_tokens += masked;
    }

    TargetEpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_tokens > 0 ? loss_sum / static_cast<double>(loss_tokens) : 0.0;
    log.top_tier_accuracy = teacher_forced_accuracy(lm, corpus, top_ids);
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.epochs.push_back(log);
    result.epochs_completed = epoch;
    if (on_epoch) on_epoch(log);
    if (config.stop_accuracy > 0 && epoch >= config.min_epochs &&
        log.top_tier_accuracy >= config.stop_accuracy) {
      result.reached_stop_accuracy = true;
      break;
    }
  }
  lm.set_trainable(false);
  return result;
}

}  // namespace memprobe
