// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "memprobe/prompt.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "memprobe/adam.hpp"
#include "memprobe/checkpoint.hpp"
#include "memprobe/error.hpp"

namespace memprobe {

std::vector<TokenId> map_prefix(std::span<const TokenId> prefix, std::int64_t n) {
  if (prefix.empty()) throw MappingError("cannot map an empty prefix");
  if (n < 1) throw MappingError("prompt length must be >= 1, got " + std::to_string(n));
  const auto len = static_cast<std::int64_t>(prefix.size());
  if (len >= n) return {prefix.end() - n, prefix.end()};
  const std::int64_t copies = (n + len - 1) / len;
  std::vector<TokenId> repeated;
  repeated.reserve(static_cast<std::size_t>(copies * len));
  for (std::int64_t c = 0; c < copies; ++c) repeated.insert(repeated.end(), prefix.begin(), prefix.end());
  return {repeated.end() - n, repeated.end()};
}

std::vector<NamedTensor> Generator::named_parameters() const {
  std::vector<NamedTensor> out{{"token_embedding", token_embedding},
                               {"position_embedding", position_embedding}};
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto named = blocks[i].named_parameters("blocks." + std::to_string(i) + ".");
    out.insert(out.end(), named.begin(), named.end());
  }
  return out;
}

std::vector<Tensor> Generator::parameters() const {
  std::vector<Tensor> out;
  for (auto& n : named_parameters()) out.push_back(n.tensor);
  return out;
}

void Generator::set_trainable(bool trainable) {
  for (auto& p : parameters()) p.set_requires_grad(trainable);
}

std::uint64_t Generator::weights_checksum() const {
  const auto named = named_parameters();
  return checksum<float>(std::span<const NamedTensor>(named));
}

Generator init_generator(const TargetLM& target, std::int64_t num_blocks, std::int64_t prompt_len,
                         std::uint64_t seed, double init_std) {
  if (num_blocks < 1 || num_blocks > kMaxGeneratorBlocks) {
    throw ConfigError("generator blocks must lie in [1, " + std::to_string(kMaxGeneratorBlocks) +
                      "], got " + std::to_string(num_blocks));
  }
  if (prompt_len < 1) throw ConfigError("prompt length must be >= 1, got " + std::to_string(prompt_len));
  if (!(init_std > 0)) throw ConfigError("generator init std must be > 0");
  Generator g;
  g.config = target.config;
  g.config.num_layers = num_blocks;
  g.config.max_seq_len = prompt_len;
  g.config.validate();
  g.prompt_len = prompt_len;
  g.token_embedding = target.token_embedding.clone();
  g.position_embedding = Tensor::zeros({prompt_len, g.config.embed_dim});
  std::mt19937_64 rng(seed);
  for (std::int64_t i = 0; i < num_blocks; ++i) {
    auto block = Block::initialize(g.config, rng, init_std, init_std);
    block.make_identity();
    g.blocks.push_back(std::move(block));
  }
  g.set_trainable(true);
  return g;
}

Tensor generate_soft_prompts(const Generator& g, std::span<const std::vector<TokenId>> prefixes) {
  if (prefixes.empty()) throw MappingError("no prefixes to generate prompts for");
  std::vector<TokenId> ids;
  ids.reserve(prefixes.size() * static_cast<std::size_t>(g.prompt_len));
  for (const auto& p : prefixes) {
    const auto mapped = map_prefix(p, g.prompt_len);
    ids.insert(ids.end(), mapped.begin(), mapped.end());
  }
  const auto batch = static_cast<std::int64_t>(prefixes.size());
  auto x = add_positional(embedding(g.token_embedding, ids), g.position_embedding, g.prompt_len);
  for (const auto& block : g.blocks) x = block_forward(block, g.config, x, batch, true);
  return x;
}

Tensor generate_soft_prompt(const Generator& g, std::span<const TokenId> prefix) {
  const std::vector<std::vector<TokenId>> one{{prefix.begin(), prefix.end()}};
  return generate_soft_prompts(g, one);
}

ConstantSoftPrompt init_constant_prompt(const TargetLM& target, std::int64_t prompt_len,
                                        CspInit init, std::uint64_t seed, double init_std) {
  if (prompt_len < 1) throw ConfigError("prompt length must be >= 1, got " + std::to_string(prompt_len));
  const std::int64_t d = target.config.embed_dim;
  ConstantSoftPrompt csp;
  if (init == CspInit::vocab) {
    if (prompt_len > target.config.vocab_size) {
      throw ConfigError("prompt length exceeds the vocabulary size");
    }
    std::vector<TokenId> ids(static_cast<std::size_t>(prompt_len));
    for (std::int64_t i = 0; i < prompt_len; ++i) ids[i] = static_cast<TokenId>(i);
    csp.prompt = embedding(target.token_embedding, ids).clone();
  } else {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, init_std);
    std::vector<float> data(static_cast<std::size_t>(prompt_len * d));
    for (auto& v : data) v = static_cast<float>(normal(rng));
    csp.prompt = Tensor::from_data({prompt_len, d}, std::move(data));
  }
  csp.prompt.set_requires_grad(true);
  return csp;
}

std::string to_string(MethodTag tag) {
  switch (tag) {
    case MethodTag::none: return "none";
    case MethodTag::hard_const: return "hard_const";
    case MethodTag::hard_dyn: return "hard_dyn";
    case MethodTag::csp: return "csp";
    case MethodTag::dynamic: return "dynamic";
  }
  return "unknown";
}

MethodTag parse_method_tag(const std::string& name) {
  for (auto tag : {MethodTag::none, MethodTag::hard_const, MethodTag::hard_dyn, MethodTag::csp,
                   MethodTag::dynamic}) {
    if (to_string(tag) == name) return tag;
  }
  throw MethodError("unknown method '" + name +
                    "' (expected none, hard_const, hard_dyn, csp or dynamic)");
}

ExtractionMethod ExtractionMethod::none() { return {MethodTag::none, std::monostate{}}; }
ExtractionMethod ExtractionMethod::hard_const(std::int64_t n) { return {MethodTag::hard_const, n}; }
ExtractionMethod ExtractionMethod::hard_dyn(std::int64_t n) { return {MethodTag::hard_dyn, n}; }
ExtractionMethod ExtractionMethod::csp(ConstantSoftPrompt p) { return {MethodTag::csp, std::move(p)}; }
ExtractionMethod ExtractionMethod::dynamic(Generator g) { return {MethodTag::dynamic, std::move(g)}; }

void ExtractionMethod::validate() const {
  bool ok = false;
  switch (tag) {
    case MethodTag::none: ok = std::holds_alternative<std::monostate>(payload); break;
    case MethodTag::hard_const:
    case MethodTag::hard_dyn:
      ok = std::holds_alternative<std::int64_t>(payload) && std::get<std::int64_t>(payload) >= 1;
      break;
    case MethodTag::csp:
      ok = std::holds_alternative<ConstantSoftPrompt>(payload) &&
           std::get<ConstantSoftPrompt>(payload).prompt.defined() &&
           std::get<ConstantSoftPrompt>(payload).prompt.rank() == 2;
      break;
    case MethodTag::dynamic: ok = std::holds_alternative<Generator>(payload); break;
  }
  if (!ok) throw MethodError("payload does not match method tag " + to_string(tag));
}

std::int64_t ExtractionMethod::prompt_len() const {
  validate();
  switch (tag) {
    case MethodTag::none: return 0;
    case MethodTag::hard_const:
    case MethodTag::hard_dyn: return std::get<std::int64_t>(payload);
    case MethodTag::csp: return std::get<ConstantSoftPrompt>(payload).prompt_len();
    case MethodTag::dynamic: return std::get<Generator>(payload).prompt_len;
  }
  return 0;
}

Tensor method_prompts(const ExtractionMethod& method, const TargetLM& target,
                      std::span<const std::vector<TokenId>> prefixes) {
  method.validate();
  for (const auto& p : prefixes) {
    if (p.empty()) throw MappingError("empty prefix");
  }
  const std::int64_t n = method.prompt_len();
  switch (method.tag) {
    case MethodTag::none: return {};
    case MethodTag::hard_const: {
      if (n > target.config.vocab_size) throw ConfigError("prompt length exceeds the vocabulary size");
      std::vector<TokenId> ids;
      for (std::size_t b = 0; b < prefixes.size(); ++b) {
        for (std::int64_t i = 0; i < n; ++i) ids.push_back(static_cast<TokenId>(i));
      }
      return embed(target, ids);
    }
    case MethodTag::hard_dyn: {
      std::vector<TokenId> ids;
      for (const auto& p : prefixes) {
        const auto mapped = map_prefix(p, n);
        ids.insert(ids.end(), mapped.begin(), mapped.end());
      }
      return embed(target, ids);
    }
    case MethodTag::csp: {
      const auto& prompt = std::get<ConstantSoftPrompt>(method.payload).prompt;
      if (prompt.dim(1) != target.config.embed_dim) {
        throw DimensionError("constant prompt width " + std::to_string(prompt.dim(1)) +
                             " does not match target width " + std::to_string(target.config.embed_dim));
      }
      const std::vector<Tensor> copies(prefixes.size(), prompt);
      return concat_rows<float>(copies);
    }
    case MethodTag::dynamic: {
      const auto& g = std::get<Generator>(method.payload);
      if (g.config.embed_dim != target.config.embed_dim) {
        throw DimensionError("generator width does not match target width");
      }
      return generate_soft_prompts(g, prefixes);
    }
  }
  return {};
}

namespace {

/// Stacks [prompt_b || body_b] per sequence.
Tensor interleave(const Tensor& prompts, std::int64_t n, const Tensor& bodies, std::int64_t body_len,
                  std::int64_t batch) {
  if (!prompts.defined()) return bodies;
  std::vector<Tensor> parts;
  parts.reserve(static_cast<std::size_t>(2 * batch));
  for (std::int64_t b = 0; b < batch; ++b) {
    parts.push_back(slice_rows(prompts, b * n, n));
    parts.push_back(slice_rows(bodies, b * body_len, body_len));
  }
  return concat_rows<float>(parts);
}

}  // namespace

Tensor build_method_inputs(const ExtractionMethod& method, const TargetLM& target,
                           std::span<const std::vector<TokenId>> prefixes) {
  if (prefixes.empty()) throw MappingError("no prefixes");
  const auto len = static_cast<std::int64_t>(prefixes.front().size());
  std::vector<TokenId> ids;
  for (const auto& p : prefixes) {
    if (static_cast<std::int64_t>(p.size()) != len) {
      throw DimensionError("batched prefixes must share one length");
    }
    ids.insert(ids.end(), p.begin(), p.end());
  }
  const auto prompts = method_prompts(method, target, prefixes);
  return interleave(prompts, method.prompt_len(), embed(target, ids), len,
                    static_cast<std::int64_t>(prefixes.size()));
}

Tensor build_method_input(const ExtractionMethod& method, const TargetLM& target,
                          std::span<const TokenId> prefix) {
  const std::vector<std::vector<TokenId>> one{{prefix.begin(), prefix.end()}};
  return build_method_inputs(method, target, one);
}

TrainingInput build_training_input(const ExtractionMethod& method, const TargetLM& target,
                                   std::span<const SequenceSplit> splits) {
  if (splits.empty()) throw ContractError("empty training batch");
  const auto L = static_cast<std::int64_t>(splits.front().prefix.size());
  const auto S = static_cast<std::int64_t>(splits.front().suffix.size());
  if (S < 1) throw ContractError("empty suffix: the aligned loss has no position to score");
  std::vector<std::vector<TokenId>> prefixes;
  std::vector<TokenId> body_ids;
  for (const auto& s : splits) {
    if (static_cast<std::int64_t>(s.prefix.size()) != L ||
        static_cast<std::int64_t>(s.suffix.size()) != S) {
      throw DimensionError("training batch mixes prefix or suffix lengths");
    }
    prefixes.push_back(s.prefix);
    body_ids.insert(body_ids.end(), s.prefix.begin(), s.prefix.end());
    body_ids.insert(body_ids.end(), s.suffix.begin(), s.suffix.end());
  }
  const std::int64_t n = method.prompt_len();
  const auto batch = static_cast<std::int64_t>(splits.size());
  TrainingInput input;
  input.batch = batch;
  input.suffix_start = n + L;
  input.embedded = interleave(method_prompts(method, target, prefixes), n, embed(target, body_ids),
                              L + S, batch);
  input.position_tokens.reserve(static_cast<std::size_t>(batch * (n + L + S)));
  for (std::int64_t b = 0; b < batch; ++b) {
    input.position_tokens.insert(input.position_tokens.end(), static_cast<std::size_t>(n), 0);
    const auto* row = body_ids.data() + b * (L + S);
    input.position_tokens.insert(input.position_tokens.end(), row, row + L + S);
  }
  return input;
}

Tensor aligned_clm_loss(const TargetLM& target, const TrainingInput& input) {
  if (!input.embedded.defined() || input.batch < 1 || input.embedded.dim(0) % input.batch != 0) {
    throw DimensionError("training input rows do not split into the declared batch");
  }
  const std::int64_t T = input.seq_len();
  const std::int64_t k = input.suffix_start;
  if (k < 1 || k >= T) {
    throw ContractError("empty suffix: suffix start " + std::to_string(k) +
                        " leaves no suffix position in length " + std::to_string(T));
  }
  if (static_cast<std::int64_t>(input.position_tokens.size()) != input.batch * T) {
    throw DimensionError("position token count does not match the embedded input");
  }
  std::vector<TokenId> targets(input.position_tokens.size(), 0);
  std::vector<std::uint8_t> mask(input.position_tokens.size(), 0);
  for (std::int64_t b = 0; b < input.batch; ++b) {
    for (std::int64_t t = k - 1; t + 1 < T; ++t) {
      targets[b * T + t] = input.position_tokens[b * T + t + 1];
      mask[b * T + t] = 1;
    }
  }
  return masked_cross_entropy(forward_embedded(target, input.embedded, input.batch), targets, mask);
}

void PromptTrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(lr > 0)) throw ConfigError("learning rate must be > 0");
  if (!(clip_norm > 0)) throw ConfigError("clip norm must be > 0");
  if (prefix_len < 1) throw ConfigError("prefix length must be >= 1");
}

nlohmann::json to_json(const PromptTrainConfig& c) {
  return {{"epochs", c.epochs},       {"batch_size", c.batch_size}, {"lr", c.lr},
          {"clip_norm", c.clip_norm}, {"prefix_len", c.prefix_len}, {"seed", c.seed}};
}

namespace {

std::vector<SequenceSplit> splits_for(const Corpus& corpus, std::span<const std::int64_t> ids,
                                      std::int64_t prefix_len) {
  std::vector<SequenceSplit> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(split_sequence(corpus.sequence(id).tokens, prefix_len, id));
  return out;
}

void require_frozen(const TargetLM& target) {
  for (const auto& p : target.parameters()) {
    if (p.requires_grad()) throw ContractError("target must be frozen before prompt training");
  }
}

PromptTrainResult train_prompt(const ExtractionMethod& method, std::vector<Tensor> params,
                               const TargetLM& target, const Corpus& corpus,
                               std::span<const std::int64_t> train_ids,
                               const PromptTrainConfig& config, const PromptEpochCallback& on_epoch) {
  config.validate();
  require_frozen(target);
  if (train_ids.empty()) throw ContractError("no training sequences");
  PromptTrainResult result;
  result.target_checksum_before = target.weights_checksum();

  std::set<std::int64_t> seen;
  for (auto id : train_ids) {
    if (seen.insert(id).second) result.consumed_ids.push_back(id);
  }
  const auto splits = splits_for(corpus, train_ids, config.prefix_len);

  for (auto& p : params) p.set_requires_grad(true);
  AdamConfig adam;
  adam.learning_rate = config.lr;
  auto state = AdamState::for_parameters(params, adam);

  const double initial = evaluate_aligned_loss(method, target, corpus, train_ids, config.prefix_len,
                                               config.batch_size);
  result.loss_curve.push_back(initial);
  if (on_epoch) on_epoch({0, initial});
  double last_finite = initial;

  std::vector<std::size_t> order(splits.size());
  for (std::int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::seed_seq seq{config.seed, static_cast<std::uint64_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0;
    std::size_t seen_sequences = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      std::vector<SequenceSplit> batch;
      for (std::size_t i = begin; i < end; ++i) batch.push_back(splits[order[i]]);
      Tape tape;
      double value = 0;
      {
        TapeScope<float> scope(tape);
        auto loss = aligned_clm_loss(target, build_training_input(method, target, batch));
        value = loss.item();
        if (!std::isfinite(value)) {
          throw TrainingError("prompt training diverged in epoch " + std::to_string(epoch),
                              last_finite);
        }
        tape.backward(loss);
      }
      last_finite = value;
      clip_grad_norm<float>(params, config.clip_norm);
      adam_step<float>(params, state);
      zero_grads<float>(params);
      loss_sum += value * static_cast<double>(batch.size());
      seen_sequences += batch.size();
    }
    const double mean = loss_sum / static_cast<double>(seen_sequences);
    result.loss_curve.push_back(mean);
    if (on_epoch) on_epoch({epoch, mean});
  }
  result.final_loss = evaluate_aligned_loss(method, target, corpus, train_ids, config.prefix_len,
                                            config.batch_size);
  if (!std::isfinite(result.final_loss)) {
    throw TrainingError("prompt training produced a non-finite final loss", last_finite);
  }
  result.target_checksum_after = target.weights_checksum();
  if (result.target_checksum_after != result.target_checksum_before) {
    throw ContractError("target weights changed during prompt training");
  }
  return result;
}

}  // namespace

double evaluate_aligned_loss(const ExtractionMethod& method, const TargetLM& target,
                             const Corpus& corpus, std::span<const std::int64_t> ids,
                             std::int64_t prefix_len, std::int64_t batch_size) {
  if (ids.empty()) throw ContractError("no sequences to evaluate");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  const auto splits = splits_for(corpus, ids, prefix_len);
  double sum = 0;
  double tokens = 0;
  for (std::size_t begin = 0; begin < splits.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(splits.size(), begin + static_cast<std::size_t>(batch_size));
    const std::span<const SequenceSplit> batch(splits.data() + begin, end - begin);
    const auto loss = aligned_clm_loss(target, build_training_input(method, target, batch));
    const double count = static_cast<double>(batch.size() * batch.front().suffix.size());
    sum += static_cast<double>(loss.item()) * count;
    tokens += count;
  }
  return sum / tokens;
}

PromptTrainResult train_generator(Generator& g, const TargetLM& target, const Corpus& corpus,
                                  std::span<const std::int64_t> train_ids,
                                  const PromptTrainConfig& config, const PromptEpochCallback& on_epoch) {
  if (g.config.embed_dim != target.config.embed_dim ||
      g.config.vocab_size != target.config.vocab_size) {
    throw ConfigError("generator dimensions do not match the target");
  }
  return train_prompt(ExtractionMethod::dynamic(g), g.parameters(), target, corpus, train_ids, config,
                      on_epoch);
}

PromptTrainResult train_csp(ConstantSoftPrompt& csp, const TargetLM& target, const Corpus& corpus,
                            std::span<const std::int64_t> train_ids, const PromptTrainConfig& config,
                            const PromptEpochCallback& on_epoch) {
  return train_prompt(ExtractionMethod::csp(csp), {csp.prompt}, target, corpus, train_ids, config,
                      on_epoch);
}

void save_method(const ExtractionMethod& method, const std::filesystem::path& path,
                 const nlohmann::json& extra) {
  method.validate();
  nlohmann::json fields = extra.is_object() ? extra : nlohmann::json::object();
  fields["method_tag"] = to_string(method.tag);
  fields["prompt_len"] = method.prompt_len();
  if (method.tag == MethodTag::csp) {
    const auto& prompt = std::get<ConstantSoftPrompt>(method.payload).prompt;
    fields["embed_dim"] = prompt.dim(1);
    const std::vector<NamedTensor> tensors{{"prompt", prompt}};
    write_dspx(path, fields, tensors);
  } else if (method.tag == MethodTag::dynamic) {
    const auto& g = std::get<Generator>(method.payload);
    fields["embed_dim"] = g.config.embed_dim;
    fields["num_blocks"] = g.num_blocks();
    fields["config"] = to_json(g.config);
    write_dspx(path, fields, g.named_parameters());
  } else {
    throw MethodError("method " + to_string(method.tag) + " has no trainable state to save");
  }
}

LoadedMethod load_method(const std::filesystem::path& path, const TargetLM& target) {
  auto file = read_dspx(path);
  const auto& h = file.header;
  if (!h.contains("method_tag") || !h["method_tag"].is_string()) {
    throw FormatError("checkpoint " + path.string() + " has no method_tag");
  }
  const auto tag = parse_method_tag(h["method_tag"].get<std::string>());
  const std::int64_t d = target.config.embed_dim;
  LoadedMethod out;
  out.header = h;
  if (tag == MethodTag::csp) {
    if (file.tensors.size() != 1) throw FormatError("csp checkpoint must hold exactly one tensor");
    ConstantSoftPrompt csp;
    csp.prompt = file.tensor("prompt");
    if (csp.prompt.rank() != 2 || csp.prompt.dim(1) != d) {
      throw FormatError("csp prompt shape " + shape_str(csp.prompt.shape()) +
                        " does not match target width " + std::to_string(d));
    }
    out.method = ExtractionMethod::csp(std::move(csp));
  } else if (tag == MethodTag::dynamic) {
    std::int64_t blocks = 0;
    std::int64_t n = 0;
    try {
      blocks = h.at("num_blocks").get<std::int64_t>();
      n = h.at("prompt_len").get<std::int64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("generator header: ") + e.what());
    }
    const auto stored = transformer_config_from_json(h.at("config"));
    if (stored.embed_dim != d || stored.vocab_size != target.config.vocab_size ||
        stored.num_heads != target.config.num_heads ||
        stored.ffn_variant != target.config.ffn_variant ||
        stored.ffn_hidden_dim != target.config.ffn_hidden_dim) {
      throw FormatError("generator checkpoint does not fit the target configuration");
    }
    auto g = init_generator(target, blocks, n, 0);
    auto named = g.named_parameters();
    if (named.size() != file.tensors.size()) {
      throw FormatError("generator checkpoint holds " + std::to_string(file.tensors.size()) +
                        " tensors, expected " + std::to_string(named.size()));
    }
    for (auto& slot : named) {
      const auto& src = file.tensor(slot.name);
      if (src.shape() != slot.tensor.shape()) {
        throw FormatError("tensor '" + slot.name + "' has shape " + shape_str(src.shape()) +
                          ", expected " + shape_str(slot.tensor.shape()));
      }
      std::copy(src.data().begin(), src.data().end(), slot.tensor.data().begin());
    }
    out.method = ExtractionMethod::dynamic(std::move(g));
  } else {
    throw FormatError("method_tag " + to_string(tag) + " is not a trainable method");
  }
  return out;
}

}  // namespace memprobe
