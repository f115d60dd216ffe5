// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "memprobe/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "memprobe/checkpoint.hpp"
#include "memprobe/error.hpp"

namespace memprobe {

const CorpusSequence& Corpus::sequence(std::int64_t id) const {
  if (id < 0 || id >= static_cast<std::int64_t>(sequences.size())) {
    throw IndexError("sequence id " + std::to_string(id) + " not in corpus of " +
                     std::to_string(sequences.size()));
  }
  return sequences[static_cast<std::size_t>(id)];
}

std::vector<std::int64_t> Corpus::dup_tiers() const {
  std::set<std::int64_t> tiers;
  for (const auto& s : sequences) tiers.insert(s.dup_count);
  return {tiers.begin(), tiers.end()};
}

std::uint64_t Corpus::checksum() const {
  const std::string text = to_json(*this).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Corpus generate_corpus(std::int64_t vocab_size, std::int64_t n_unique, std::int64_t seq_len,
                       std::span<const DupTier> tiers, std::uint64_t seed) {
  if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2, got " + std::to_string(vocab_size));
  if (seq_len < 2) throw ConfigError("seq_len must be >= 2, got " + std::to_string(seq_len));
  std::int64_t tier_total = 0;
  for (const auto& t : tiers) {
    if (t.count < 0) throw ConfigError("duplication tier count must be >= 0");
    if (t.multiplicity < 1) throw ConfigError("duplication multiplicity must be >= 1");
    tier_total += t.count;
  }
  if (tier_total != n_unique) {
    throw ConfigError("duplication tiers cover " + std::to_string(tier_total) +
                      " sequences but n_unique is " + std::to_string(n_unique));
  }
  // Fewer possible sequences than requested would make the distinctness loop spin.
  const double log_space = static_cast<double>(seq_len) * std::log(static_cast<double>(vocab_size));
  if (log_space < std::log(static_cast<double>(n_unique) * 2.0)) {
    throw ConfigError("vocabulary and length too small for " + std::to_string(n_unique) +
                      " distinct sequences");
  }

  Corpus corpus;
  corpus.vocab_size = vocab_size;
  corpus.seq_len = seq_len;
  corpus.seed = seed;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<TokenId> token(0, static_cast<TokenId>(vocab_size - 1));
  std::set<std::vector<TokenId>> seen;
  std::int64_t id = 0;
  for (const auto& tier : tiers) {
    for (std::int64_t i = 0; i < tier.count; ++i) {
      std::vector<TokenId> tokens(static_cast<std::size_t>(seq_len));
      do {
        for (auto& t : tokens) t = token(rng);
      } while (!seen.insert(tokens).second);
      corpus.sequences.push_back({id++, std::move(tokens), tier.multiplicity});
    }
  }
  return corpus;
}

SequenceSplit split_sequence(std::span<const TokenId> tokens, std::int64_t prefix_len,
                             std::int64_t origin_id) {
  const auto n = static_cast<std::int64_t>(tokens.size());
  if (prefix_len <= 0 || prefix_len >= n) {
    throw SplitError("prefix length " + std::to_string(prefix_len) +
                     " must lie strictly between 0 and the sequence length " + std::to_string(n));
  }
  return {{tokens.begin(), tokens.begin() + prefix_len},
          {tokens.begin() + prefix_len, tokens.end()},
          origin_id};
}

namespace {

/// Splits `total` across groups proportionally to `weights` (largest
/// remainder), never exceeding `caps`.
std::vector<std::int64_t> apportion(std::int64_t total, const std::vector<std::int64_t>& weights,
                                    const std::vector<std::int64_t>& caps) {
  const std::int64_t weight_sum = std::accumulate(weights.begin(), weights.end(), std::int64_t{0});
  std::vector<std::int64_t> out(weights.size(), 0);
  if (weight_sum == 0) return out;
  std::vector<std::pair<std::int64_t, std::size_t>> remainders;  // scaled remainder, index
  std::int64_t given = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const std::int64_t scaled = total * weights[i];
    out[i] = std::min(scaled / weight_sum, caps[i]);
    given += out[i];
    remainders.emplace_back(scaled % weight_sum, i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  while (given < total) {
    bool progressed = false;
    for (const auto& [rem, i] : remainders) {
      if (given == total) break;
      if (out[i] < caps[i]) {
        ++out[i];
        ++given;
        progressed = true;
      }
    }
    if (!progressed) break;
  }
  return out;
}

}  // namespace

SplitSets sample_splits(const Corpus& corpus, std::int64_t n_train, std::int64_t n_test,
                        std::uint64_t seed) {
  const auto population = static_cast<std::int64_t>(corpus.sequences.size());
  if (n_train < 0 || n_test < 0 || n_train + n_test > population) {
    throw SamplingError("cannot sample " + std::to_string(n_train) + " train + " +
                        std::to_string(n_test) + " test sequences from " +
                        std::to_string(population));
  }
  std::map<std::int64_t, std::vector<std::int64_t>> by_tier;
  for (const auto& s : corpus.sequences) by_tier[s.dup_count].push_back(s.id);

  std::vector<std::int64_t> sizes;
  for (const auto& [dup, ids] : by_tier) sizes.push_back(static_cast<std::int64_t>(ids.size()));
  const auto test_alloc = apportion(n_test, sizes, sizes);
  std::vector<std::int64_t> spare(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) spare[i] = sizes[i] - test_alloc[i];
  const auto train_alloc = apportion(n_train, sizes, spare);

  std::mt19937_64 rng(seed);
  SplitSets out;
  std::size_t tier = 0;
  for (auto& [dup, ids] : by_tier) {
    std::shuffle(ids.begin(), ids.end(), rng);
    auto it = ids.begin();
    out.test_ids.insert(out.test_ids.end(), it, it + test_alloc[tier]);
    it += test_alloc[tier];
    out.train_ids.insert(out.train_ids.end(), it, it + train_alloc[tier]);
    ++tier;
  }
  std::sort(out.train_ids.begin(), out.train_ids.end());
  std::sort(out.test_ids.begin(), out.test_ids.end());
  return out;
}

std::vector<std::int64_t> training_stream(const Corpus& corpus, std::mt19937_64& rng) {
  std::vector<std::int64_t> stream;
  for (const auto& s : corpus.sequences) stream.insert(stream.end(), s.dup_count, s.id);
  std::shuffle(stream.begin(), stream.end(), rng);
  return stream;
}

nlohmann::json to_json(const Corpus& corpus) {
  auto seqs = nlohmann::json::array();
  for (const auto& s : corpus.sequences) {
    seqs.push_back({{"id", s.id}, {"tokens", s.tokens}, {"dup_count", s.dup_count}});
  }
  return {{"format_version", kCorpusFormatVersion},
          {"vocab_size", corpus.vocab_size},
          {"seq_len", corpus.seq_len},
          {"seed", corpus.seed},
          {"sequences", std::move(seqs)},
          {"splits", {{"train_ids", corpus.splits.train_ids}, {"test_ids", corpus.splits.test_ids}}}};
}

Corpus corpus_from_json(const nlohmann::json& j) {
  Corpus c;
  try {
    if (j.at("format_version").get<int>() != kCorpusFormatVersion) {
      throw FormatError("unsupported corpus format_version " + j.at("format_version").dump());
    }
    c.vocab_size = j.at("vocab_size").get<std::int64_t>();
    c.seq_len = j.at("seq_len").get<std::int64_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& s : j.at("sequences")) {
      c.sequences.push_back({s.at("id").get<std::int64_t>(), s.at("tokens").get<std::vector<TokenId>>(),
                             s.at("dup_count").get<std::int64_t>()});
    }
    c.splits.train_ids = j.at("splits").at("train_ids").get<std::vector<std::int64_t>>();
    c.splits.test_ids = j.at("splits").at("test_ids").get<std::vector<std::int64_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed corpus: ") + e.what());
  }
  for (std::size_t i = 0; i < c.sequences.size(); ++i) {
    const auto& s = c.sequences[i];
    if (s.id != static_cast<std::int64_t>(i)) throw FormatError("corpus ids must be 0..n-1 in order");
    if (static_cast<std::int64_t>(s.tokens.size()) != c.seq_len) {
      throw FormatError("sequence " + std::to_string(s.id) + " has wrong length");
    }
    for (TokenId t : s.tokens) {
      if (t < 0 || t >= c.vocab_size) {
        throw FormatError("sequence " + std::to_string(s.id) + " has token outside vocabulary");
      }
    }
    if (s.dup_count < 1) throw FormatError("sequence " + std::to_string(s.id) + " has dup_count < 1");
  }
  std::set<std::int64_t> train(c.splits.train_ids.begin(), c.splits.train_ids.end());
  for (auto id : c.splits.test_ids) {
    if (train.count(id)) throw FormatError("train and test splits overlap at id " + std::to_string(id));
  }
  for (const auto* ids : {&c.splits.train_ids, &c.splits.test_ids}) {
    for (auto id : *ids) {
      if (id < 0 || id >= static_cast<std::int64_t>(c.sequences.size())) {
        throw FormatError("split id " + std::to_string(id) + " not in corpus");
      }
    }
  }
  return c;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  const std::string text = to_json(corpus).dump() + "\n";
  write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

Corpus load_corpus(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + " is not valid JSON: " + e.what());
  }
  return corpus_from_json(j);
}

}  // namespace memprobe
