// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Pre-norm causal transformer: y = z + FFN(LN(z)), z = x + MHSA(LN(x)).
// The same block type backs the frozen target model and the soft-prompt
// generator.

#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "memprobe/ops.hpp"
#include "memprobe/tensor.hpp"

namespace memprobe {

enum class FfnVariant {
  plain,  // act(z W1) W2, activation GELU
  gated,  // (act(z W1) * (z W2)) W3, activation SiLU
};

struct TransformerConfig {
  std::int64_t vocab_size = 512;
  std::int64_t embed_dim = 128;
  std::int64_t num_heads = 4;
  std::int64_t num_layers = 4;
  std::int64_t max_seq_len = 160;
  std::int64_t ffn_hidden_dim = 512;
  FfnVariant ffn_variant = FfnVariant::plain;
  double layer_norm_eps = 1e-5;

  std::int64_t head_dim() const { return embed_dim / num_heads; }
  /// Throws ConfigError when dimensions are inconsistent.
  void validate() const;

  bool operator==(const TransformerConfig&) const = default;
};

nlohmann::json to_json(const TransformerConfig& config);
TransformerConfig transformer_config_from_json(const nlohmann::json& j);

template <typename Scalar>
struct BasicBlock {
  BasicTensor<Scalar> ln1_gamma;
  BasicTensor<Scalar> ln1_beta;
  // Per-head projections are column groups of these d x d matrices.
  BasicTensor<Scalar> w_query;
  BasicTensor<Scalar> w_key;
  BasicTensor<Scalar> w_value;
  BasicTensor<Scalar> w_out;
  BasicTensor<Scalar> ln2_gamma;
  BasicTensor<Scalar> ln2_beta;
  BasicTensor<Scalar> w_ffn_act;   // W1
  BasicTensor<Scalar> w_ffn_lin;   // W2 of the gated variant; undefined for plain
  BasicTensor<Scalar> w_ffn_down;  // W3 (gated) / W2 (plain)

  /// Normal(0, init_std) projections, unit layer norms. Output projections
  /// (w_out, w_ffn_down) use out_std.
  static BasicBlock initialize(const TransformerConfig& config, std::mt19937_64& rng,
                               double init_std, double out_std);

  /// Zeroes w_out and w_ffn_down, turning the block into the identity map.
  void make_identity();

  std::vector<BasicNamedTensor<Scalar>> named_parameters(const std::string& prefix) const;

  template <typename Other>
  BasicBlock<Other> cast() const;
};

using Block = BasicBlock<float>;

/// Runs one block over a flat [batch * T x d] input.
template <typename Scalar>
BasicTensor<Scalar> block_forward(const BasicBlock<Scalar>& block, const TransformerConfig& config,
                                  const BasicTensor<Scalar>& x, std::int64_t batch, bool causal);

/// Token embedding, learned absolute positions, blocks, final layer norm and
/// an LM head tied to the token embedding.
template <typename Scalar>
struct BasicCausalLM {
  TransformerConfig config;
  BasicTensor<Scalar> token_embedding;     // V x d
  BasicTensor<Scalar> position_embedding;  // max_seq_len x d
  std::vector<BasicBlock<Scalar>> blocks;
  BasicTensor<Scalar> final_ln_gamma;
  BasicTensor<Scalar> final_ln_beta;

  static BasicCausalLM initialize(const TransformerConfig& config, std::uint64_t seed);

  std::vector<BasicNamedTensor<Scalar>> named_parameters() const;
  std::vector<BasicTensor<Scalar>> parameters() const;
  /// Sets requires_grad on every parameter; false freezes the model.
  void set_trainable(bool trainable);
  std::uint64_t weights_checksum() const;

  template <typename Other>
  BasicCausalLM<Other> cast() const;
};

using TargetLM = BasicCausalLM<float>;

/// Token-embedding rows for `tokens` (no positional term). Empty input gives 0 x d.
template <typename Scalar>
BasicTensor<Scalar> embed(const BasicCausalLM<Scalar>& lm, std::span<const TokenId> tokens);

/// Final-layer-normed hidden states for a flat [batch * T x d] embedded input.
template <typename Scalar>
BasicTensor<Scalar> forward_hidden(const BasicCausalLM<Scalar>& lm, const BasicTensor<Scalar>& seq,
                                   std::int64_t batch = 1);

/// Tied output projection: hidden . E^T.
template <typename Scalar>
BasicTensor<Scalar> lm_head(const BasicCausalLM<Scalar>& lm, const BasicTensor<Scalar>& hidden);

/// Logits [batch * T x V] for an embedded input; positions 0..T-1 are added
/// to every sequence.
template <typename Scalar>
BasicTensor<Scalar> forward_embedded(const BasicCausalLM<Scalar>& lm,
                                     const BasicTensor<Scalar>& seq, std::int64_t batch = 1);

template <typename Scalar>
BasicTensor<Scalar> forward_tokens(const BasicCausalLM<Scalar>& lm, std::span<const TokenId> tokens,
                                   std::int64_t batch = 1);

/// Writes a DSPX checkpoint with kind "target_lm". `extra` fields are merged
/// into the header.
void save_checkpoint(const TargetLM& lm, const std::filesystem::path& path,
                     const nlohmann::json& extra = nlohmann::json::object());

struct LoadedTarget {
  TargetLM model;
  nlohmann::json header;
};

LoadedTarget load_checkpoint(const std::filesystem::path& path);

}  // namespace memprobe
