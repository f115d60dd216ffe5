// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Prompt-based extraction methods: the prefix mapping, the dynamic soft-prompt
// generator, the constant soft prompt, hard-prompt baselines, the suffix-only
// training loss and the prompt training loop.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "memprobe/corpus.hpp"
#include "memprobe/transformer.hpp"

namespace memprobe {

/// Length-normalises a prefix to exactly n tokens: the last n tokens of p,
/// or, when p is shorter, the last n tokens of ceil(n / |p|) copies of p.
std::vector<TokenId> map_prefix(std::span<const TokenId> prefix, std::int64_t n);

/// Soft-prompt generator: its own copy of the target's token embedding, a
/// zero-initialised positional table and identity-initialised blocks. No
/// final layer norm and no output head.
struct Generator {
  TransformerConfig config;  // target config with num_layers = K, max_seq_len = N
  std::int64_t prompt_len = 0;
  Tensor token_embedding;     // V x d
  Tensor position_embedding;  // N x d
  std::vector<Block> blocks;

  std::int64_t num_blocks() const { return static_cast<std::int64_t>(blocks.size()); }
  std::vector<NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;
  void set_trainable(bool trainable);
  std::uint64_t weights_checksum() const;
};

inline constexpr std::int64_t kMaxGeneratorBlocks = 8;

/// Non-output block weights are Normal(0, init_std); w_out and the FFN
/// down-projection are zero.
Generator init_generator(const TargetLM& target, std::int64_t num_blocks, std::int64_t prompt_len,
                         std::uint64_t seed, double init_std = 0.02);

/// Soft prompt [N x d] for one prefix.
Tensor generate_soft_prompt(const Generator& g, std::span<const TokenId> prefix);

/// Soft prompts for several prefixes, stacked as [batch * N x d].
Tensor generate_soft_prompts(const Generator& g, std::span<const std::vector<TokenId>> prefixes);

enum class CspInit { vocab, normal };

struct ConstantSoftPrompt {
  Tensor prompt;  // N x d

  std::int64_t prompt_len() const { return prompt.dim(0); }
};

/// vocab: rows of E for token ids 0..N-1. normal: Normal(0, init_std).
ConstantSoftPrompt init_constant_prompt(const TargetLM& target, std::int64_t prompt_len,
                                        CspInit init = CspInit::vocab, std::uint64_t seed = 0,
                                        double init_std = 0.02);

enum class MethodTag { none, hard_const, hard_dyn, csp, dynamic };

std::string to_string(MethodTag tag);
/// Throws MethodError for unknown names.
MethodTag parse_method_tag(const std::string& name);

struct ExtractionMethod {
  /// Prompt length for hard prompts; the matrix for csp; the generator for dynamic.
  using Payload = std::variant<std::monostate, std::int64_t, ConstantSoftPrompt, Generator>;

  MethodTag tag = MethodTag::none;
  Payload payload;

  static ExtractionMethod none();
  static ExtractionMethod hard_const(std::int64_t prompt_len);
  static ExtractionMethod hard_dyn(std::int64_t prompt_len);
  static ExtractionMethod csp(ConstantSoftPrompt prompt);
  static ExtractionMethod dynamic(Generator generator);

  /// Throws MethodError when the payload does not fit the tag.
  void validate() const;
  /// 0 for none.
  std::int64_t prompt_len() const;
};

/// Prompt rows for each prefix, stacked [batch * N x d]; undefined for none.
/// All prefixes must be non-empty.
Tensor method_prompts(const ExtractionMethod& method, const TargetLM& target,
                      std::span<const std::vector<TokenId>> prefixes);

/// [prompt || E(p)] for generation.
Tensor build_method_input(const ExtractionMethod& method, const TargetLM& target,
                          std::span<const TokenId> prefix);

/// Batched form; all prefixes must have the same length. Rows are
/// [batch * (N + L) x d].
Tensor build_method_inputs(const ExtractionMethod& method, const TargetLM& target,
                           std::span<const std::vector<TokenId>> prefixes);

/// A batch of training sequences q = [o || E(p) || E(s)], flattened to
/// [batch * T x d] with T = N + L + S.
struct TrainingInput {
  Tensor embedded;
  std::int64_t batch = 1;
  std::int64_t suffix_start = 0;  // k = N + L
  /// Token at every position of every sequence, [batch * T]. Prompt
  /// positions hold a placeholder. Only suffix tokens are read by the loss.
  std::vector<TokenId> position_tokens;

  std::int64_t seq_len() const { return embedded.dim(0) / batch; }
};

/// Builds the training input for a batch of (prefix, suffix) pairs with equal
/// prefix lengths and equal suffix lengths.
TrainingInput build_training_input(const ExtractionMethod& method, const TargetLM& target,
                                   std::span<const SequenceSplit> splits);

/// Mean cross-entropy over the logit rows k-1 .. k+S-2 of every sequence,
/// i.e. the predictions of the suffix tokens. Throws ContractError when the
/// suffix is empty.
Tensor aligned_clm_loss(const TargetLM& target, const TrainingInput& input);

struct PromptTrainConfig {
  std::int64_t epochs = 30;
  std::int64_t batch_size = 16;
  double lr = 1e-3;
  double clip_norm = 1.0;
  std::int64_t prefix_len = 24;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const PromptTrainConfig& config);

struct PromptEpochLog {
  std::int64_t epoch = 0;  // 0 is the evaluation pass before any update
  double loss = 0;
};

struct PromptTrainResult {
  /// loss_curve[0]: loss of the untrained prompt over the training ids with no
  /// update; loss_curve[e]: mean minibatch loss of epoch e.
  std::vector<double> loss_curve;
  /// Training-set loss after the last update.
  double final_loss = 0;
  /// Every sequence id read during training, in order of first use.
  std::vector<std::int64_t> consumed_ids;
  std::uint64_t target_checksum_before = 0;
  std::uint64_t target_checksum_after = 0;
};

using PromptEpochCallback = std::function<void(const PromptEpochLog&)>;

/// Trains the generator in place on `train_ids`. The target must be frozen.
PromptTrainResult train_generator(Generator& g, const TargetLM& target, const Corpus& corpus,
                                  std::span<const std::int64_t> train_ids,
                                  const PromptTrainConfig& config,
                                  const PromptEpochCallback& on_epoch = {});

/// Same loop for a constant prompt matrix.
PromptTrainResult train_csp(ConstantSoftPrompt& csp, const TargetLM& target, const Corpus& corpus,
                            std::span<const std::int64_t> train_ids,
                            const PromptTrainConfig& config,
                            const PromptEpochCallback& on_epoch = {});

/// Aligned loss of `method` over `ids` without updates, token-weighted.
double evaluate_aligned_loss(const ExtractionMethod& method, const TargetLM& target,
                             const Corpus& corpus, std::span<const std::int64_t> ids,
                             std::int64_t prefix_len, std::int64_t batch_size = 16);

/// DSPX checkpoint with header field method_tag ("csp" or "dynamic").
void save_method(const ExtractionMethod& method, const std::filesystem::path& path,
                 const nlohmann::json& extra = nlohmann::json::object());

struct LoadedMethod {
  ExtractionMethod method;
  nlohmann::json header;
};

/// Checks the stored embedding width against the target.
LoadedMethod load_method(const std::filesystem::path& path, const TargetLM& target);

}  // namespace memprobe
