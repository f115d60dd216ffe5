// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "memprobe/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <map>
#include <set>
#include <thread>

#include "memprobe/error.hpp"

namespace memprobe {

std::vector<std::vector<TokenId>> greedy_generate(const TargetLM& target, const Tensor& input_embeds,
                                                  std::int64_t batch, std::int64_t steps) {
  const std::int64_t d = target.config.embed_dim;
  const std::int64_t V = target.config.vocab_size;
  if (steps < 1) throw GenerationError("generation needs at least one step");
  if (batch < 1 || !input_embeds.defined() || input_embeds.rank() != 2 ||
      input_embeds.dim(1) != d || input_embeds.dim(0) % batch != 0 || input_embeds.dim(0) == 0) {
    throw DimensionError("generation input does not hold " + std::to_string(batch) +
                         " non-empty sequences of width " + std::to_string(d));
  }
  const std::int64_t start = input_embeds.dim(0) / batch;
  if (start + steps > target.config.max_seq_len) {
    throw GenerationError("input length " + std::to_string(start) + " plus " + std::to_string(steps) +
                          " generated tokens exceeds max_seq_len " +
                          std::to_string(target.config.max_seq_len));
  }
  std::vector<std::vector<TokenId>> out(static_cast<std::size_t>(batch));
  auto src = input_embeds.data();
  std::vector<float> seq(src.begin(), src.end());
  const auto table = target.token_embedding.data();
  for (std::int64_t step = 0; step < steps; ++step) {
    const std::int64_t T = start + step;
    const auto hidden = forward_hidden(target, Tensor::from_data({batch * T, d}, seq), batch);
    std::vector<float> last(static_cast<std::size_t>(batch * d));
    for (std::int64_t b = 0; b < batch; ++b) {
      const auto row = hidden.data().subspan(((b + 1) * T - 1) * d, d);
      std::copy(row.begin(), row.end(), last.begin() + b * d);
    }
    const auto logits = lm_head(target, Tensor::from_data({batch, d}, std::move(last)));
    std::vector<float> next(static_cast<std::size_t>(batch * (T + 1) * d));
    for (std::int64_t b = 0; b < batch; ++b) {
      const auto row = logits.data().subspan(b * V, V);
      TokenId best = 0;
      for (std::int64_t j = 1; j < V; ++j) {
        if (row[j] > row[best]) best = static_cast<TokenId>(j);
      }
      out[b].push_back(best);
      std::copy_n(seq.begin() + b * T * d, T * d, next.begin() + b * (T + 1) * d);
      std::copy_n(table.begin() + best * d, d, next.begin() + (b * (T + 1) + T) * d);
    }
    seq = std::move(next);
  }
  return out;
}

std::vector<TokenId> greedy_generate(const TargetLM& target, const Tensor& input_embeds,
                                     std::int64_t steps) {
  return greedy_generate(target, input_embeds, 1, steps).front();
}

namespace {

void require_comparable(std::span<const TokenId> a, std::span<const TokenId> b) {
  if (a.size() != b.size()) {
    throw ComparisonError("cannot compare " + std::to_string(a.size()) + " generated tokens with " +
                          std::to_string(b.size()) + " reference tokens");
  }
  if (a.empty()) throw ComparisonError("cannot compare empty token lists");
}

}  // namespace

int exact_match(std::span<const TokenId> generated, std::span<const TokenId> truth) {
  require_comparable(generated, truth);
  return std::equal(generated.begin(), generated.end(), truth.begin()) ? 1 : 0;
}

std::string to_string(FractionalMode mode) {
  return mode == FractionalMode::prefix ? "prefix" : "positionwise";
}

FractionalMode parse_fractional_mode(const std::string& name) {
  if (name == "positionwise") return FractionalMode::positionwise;
  if (name == "prefix") return FractionalMode::prefix;
  throw ConfigError("unknown fractional mode '" + name + "' (expected positionwise or prefix)");
}

double fractional_match(std::span<const TokenId> generated, std::span<const TokenId> truth,
                        FractionalMode mode) {
  require_comparable(generated, truth);
  std::size_t hits = 0;
  if (mode == FractionalMode::prefix) {
    while (hits < truth.size() && generated[hits] == truth[hits]) ++hits;
  } else {
    for (std::size_t i = 0; i < truth.size(); ++i) hits += generated[i] == truth[i];
  }
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

std::optional<double> relative_gain(double value, double baseline) {
  if (baseline == 0.0) return std::nullopt;
  return 100.0 * (value - baseline) / baseline;
}

void EvalConfig::validate(std::int64_t seq_len) const {
  if (prefix_len < 1) throw ConfigError("prefix length must be >= 1");
  if (suffix_len < 1) throw ConfigError("suffix length must be >= 1");
  if (prefix_len + suffix_len > seq_len) {
    throw ConfigError("prefix length " + std::to_string(prefix_len) + " plus suffix length " +
                      std::to_string(suffix_len) + " exceeds the corpus sequence length " +
                      std::to_string(seq_len));
  }
  if (threads < 0) throw ConfigError("thread count must be >= 0");
  if (chunk_size < 1) throw ConfigError("chunk size must be >= 1");
}

nlohmann::json to_json(const EvalConfig& c) {
  return {{"prefix_len", c.prefix_len},
          {"suffix_len", c.suffix_len},
          {"fractional_mode", to_string(c.fractional_mode)},
          {"seed", c.seed}};
}

std::int64_t default_thread_count() {
  if (const char* env = std::getenv("MEMPROBE_THREADS"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const long value = std::strtol(env, &end, 10);
    if (*end != '\0' || value < 1) {
      throw ConfigError(std::string("MEMPROBE_THREADS must be a positive integer, got '") + env + "'");
    }
    return value;
  }
  return std::max<std::int64_t>(1, std::thread::hardware_concurrency());
}

namespace {

struct ChunkResult {
  std::vector<ExtractionOutcome> outcomes;
  double loss_sum = 0;  // token-weighted
  double loss_tokens = 0;
};

ChunkResult evaluate_chunk(const ExtractionMethod& method, const TargetLM& target,
                           const Corpus& corpus, std::span<const std::int64_t> ids,
                           const EvalConfig& config) {
  std::vector<SequenceSplit> splits;
  std::vector<std::vector<TokenId>> prefixes;
  for (auto id : ids) {
    const auto& tokens = corpus.sequence(id).tokens;
    auto split = split_sequence(std::span<const TokenId>(tokens).first(
                                    static_cast<std::size_t>(config.prefix_len + config.suffix_len)),
                                config.prefix_len, id);
    prefixes.push_back(split.prefix);
    splits.push_back(std::move(split));
  }
  const auto batch = static_cast<std::int64_t>(ids.size());
  ChunkResult result;
  const auto inputs = build_method_inputs(method, target, prefixes);
  const auto generated = greedy_generate(target, inputs, batch, config.suffix_len);
  for (std::int64_t b = 0; b < batch; ++b) {
    ExtractionOutcome o;
    o.sequence_id = ids[b];
    o.generated = generated[b];
    o.exact = exact_match(o.generated, splits[b].suffix) == 1;
    o.fractional = fractional_match(o.generated, splits[b].suffix, config.fractional_mode);
    result.outcomes.push_back(std::move(o));
  }
  const auto loss = aligned_clm_loss(target, build_training_input(method, target, splits));
  result.loss_tokens = static_cast<double>(batch * config.suffix_len);
  result.loss_sum = static_cast<double>(loss.item()) * result.loss_tokens;
  return result;
}

}  // namespace

ExtractionReport evaluate_method(const ExtractionMethod& method, const TargetLM& target,
                                 const Corpus& corpus, std::span<const std::int64_t> test_ids,
                                 const EvalConfig& config) {
  config.validate(corpus.seq_len);
  method.validate();
  if (test_ids.empty()) throw ContractError("evaluation needs at least one test sequence");

  const auto chunk = static_cast<std::size_t>(config.chunk_size);
  const std::size_t n_chunks = (test_ids.size() + chunk - 1) / chunk;
  std::vector<ChunkResult> results(n_chunks);
  std::vector<std::exception_ptr> errors(n_chunks);
  const auto run = [&](std::size_t c) {
    try {
      const std::size_t begin = c * chunk;
      const std::size_t count = std::min(chunk, test_ids.size() - begin);
      results[c] = evaluate_chunk(method, target, corpus, test_ids.subspan(begin, count), config);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  const std::int64_t threads =
      std::min<std::int64_t>(config.threads > 0 ? config.threads : default_thread_count(),
                             static_cast<std::int64_t>(n_chunks));
  if (threads <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) run(c);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::int64_t t = 0; t < threads; ++t) {
      workers.emplace_back([&] {
        for (std::size_t c = next++; c < n_chunks; c = next++) run(c);
      });
    }
    for (auto& w : workers) w.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  ExtractionReport report;
  report.method = to_string(method.tag);
  report.seed = config.seed;
  double loss_sum = 0;
  double loss_tokens = 0;
  for (auto& r : results) {
    for (auto& o : r.outcomes) report.outcomes.push_back(std::move(o));
    loss_sum += r.loss_sum;
    loss_tokens += r.loss_tokens;
  }
  report.n_test = static_cast<std::int64_t>(report.outcomes.size());
  std::map<std::int64_t, TierBreakdown> tiers;
  double exact = 0;
  double fractional = 0;
  for (const auto& o : report.outcomes) {
    exact += o.exact ? 1.0 : 0.0;
    fractional += o.fractional;
    auto& tier = tiers[corpus.sequence(o.sequence_id).dup_count];
    tier.n += 1;
    tier.exact_er += o.exact ? 1.0 : 0.0;
    tier.fractional_er += o.fractional;
  }
  const auto n = static_cast<double>(report.n_test);
  report.exact_er = exact / n;
  report.fractional_er = fractional / n;
  for (auto& [dup, tier] : tiers) {
    tier.dup_count = dup;
    tier.exact_er /= static_cast<double>(tier.n);
    tier.fractional_er /= static_cast<double>(tier.n);
    report.per_tier.push_back(tier);
  }
  report.test_loss = loss_sum / loss_tokens;
  report.test_ppl = std::exp(report.test_loss);
  return report;
}

void apply_gains(std::vector<ExtractionReport>& reports) {
  const auto base = std::find_if(reports.begin(), reports.end(),
                                 [](const auto& r) { return r.method == "none"; });
  if (base == reports.end()) throw ComparisonError("comparison needs the none method as baseline");
  const double exact = base->exact_er;
  const double fractional = base->fractional_er;
  for (auto& r : reports) {
    r.exact_gain_pct = relative_gain(r.exact_er, exact);
    r.fractional_gain_pct = relative_gain(r.fractional_er, fractional);
  }
}

std::vector<ExtractionReport> compare_all(const TargetLM& target, const Corpus& corpus,
                                          std::span<const ExtractionMethod> methods,
                                          std::span<const std::int64_t> test_ids,
                                          const EvalConfig& config) {
  if (std::none_of(methods.begin(), methods.end(),
                   [](const auto& m) { return m.tag == MethodTag::none; })) {
    throw ComparisonError("comparison needs the none method as baseline");
  }
  std::vector<ExtractionReport> reports;
  for (const auto& m : methods) reports.push_back(evaluate_method(m, target, corpus, test_ids, config));
  apply_gains(reports);
  return reports;
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fixed6(const std::optional<double>& v) { return v ? fixed6(*v) : std::string(); }

}  // namespace

nlohmann::json to_json(const ExtractionReport& r) {
  auto tiers = nlohmann::json::array();
  for (const auto& t : r.per_tier) {
    tiers.push_back({{"dup_count", t.dup_count},
                     {"n", t.n},
                     {"exact_er", t.exact_er},
                     {"fractional_er", t.fractional_er}});
  }
  return {{"format_version", kReportFormatVersion},
          {"method", r.method},
          {"exact_er", r.exact_er},
          {"fractional_er", r.fractional_er},
          {"test_loss", r.test_loss},
          {"test_ppl", r.test_ppl},
          {"n_test", r.n_test},
          {"seed", r.seed},
          {"per_tier", std::move(tiers)},
          {"gains",
           {{"exact_pct", optional_json(r.exact_gain_pct)},
            {"fractional_pct", optional_json(r.fractional_gain_pct)}}}};
}

std::string comparison_csv(std::span<const ExtractionReport> reports) {
  std::set<std::int64_t> dups;
  for (const auto& r : reports) {
    for (const auto& t : r.per_tier) dups.insert(t.dup_count);
  }
  std::string out = "method,exact_er,fractional_er,test_loss,test_ppl,n_test,seed,exact_pct,fractional_pct";
  for (auto d : dups) {
    out += ",tier" + std::to_string(d) + "_exact_er,tier" + std::to_string(d) + "_fractional_er";
  }
  out += "\n";
  for (const auto& r : reports) {
    out += r.method + "," + fixed6(r.exact_er) + "," + fixed6(r.fractional_er) + "," +
           fixed6(r.test_loss) + "," + fixed6(r.test_ppl) + "," + std::to_string(r.n_test) + "," +
           std::to_string(r.seed) + "," + fixed6(r.exact_gain_pct) + "," +
           fixed6(r.fractional_gain_pct);
    for (auto d : dups) {
      const auto it = std::find_if(r.per_tier.begin(), r.per_tier.end(),
                                   [d](const auto& t) { return t.dup_count == d; });
      out += it == r.per_tier.end() ? std::string(",,")
                                    : "," + fixed6(it->exact_er) + "," + fixed6(it->fractional_er);
    }
    out += "\n";
  }
  return out;
}

std::string format_table(std::span<const ExtractionReport> reports) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-11s %9s %9s %9s %9s %10s %10s\n", "method", "exact_er",
                "frac_er", "loss", "ppl", "exact_gain", "frac_gain");
  out += line;
  const auto gain = [](const std::optional<double>& g) {
    if (!g) return std::string("n/a");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%+.2f%%", *g);
    return std::string(buf);
  };
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-11s %9.4f %9.4f %9.4f %9.4f %10s %10s\n", r.method.c_str(),
                  r.exact_er, r.fractional_er, r.test_loss, r.test_ppl,
                  gain(r.exact_gain_pct).c_str(), gain(r.fractional_gain_pct).c_str());
    out += line;
  }
  return out;
}

}  // namespace memprobe
