// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "memprobe/transformer.hpp"

#include <cmath>

#include "memprobe/checkpoint.hpp"
#include "memprobe/error.hpp"

namespace memprobe {

void TransformerConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("transformer config: " + what);
  };
  require(vocab_size >= 2, "vocab_size must be >= 2");
  require(embed_dim >= 1, "embed_dim must be >= 1");
  require(num_heads >= 1, "num_heads must be >= 1");
  require(embed_dim % num_heads == 0, "embed_dim " + std::to_string(embed_dim) +
                                          " not divisible by num_heads " +
                                          std::to_string(num_heads));
  require(num_layers >= 0, "num_layers must be >= 0");
  require(max_seq_len >= 1, "max_seq_len must be >= 1");
  require(ffn_hidden_dim >= 1, "ffn_hidden_dim must be >= 1");
  require(layer_norm_eps > 0, "layer_norm_eps must be > 0");
}

nlohmann::json to_json(const TransformerConfig& c) {
  return {{"vocab_size", c.vocab_size},
          {"embed_dim", c.embed_dim},
          {"num_heads", c.num_heads},
          {"num_layers", c.num_layers},
          {"max_seq_len", c.max_seq_len},
          {"ffn_hidden_dim", c.ffn_hidden_dim},
          {"ffn_variant", c.ffn_variant == FfnVariant::plain ? "plain" : "gated"},
          {"layer_norm_eps", c.layer_norm_eps}};
}

TransformerConfig transformer_config_from_json(const nlohmann::json& j) {
  TransformerConfig c;
  try {
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.num_heads = j.value("num_heads", c.num_heads);
    c.num_layers = j.value("num_layers", c.num_layers);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.ffn_hidden_dim = j.value("ffn_hidden_dim", c.ffn_hidden_dim);
    c.layer_norm_eps = j.value("layer_norm_eps", c.layer_norm_eps);
    const auto variant = j.value("ffn_variant", std::string("plain"));
    if (variant == "plain") {
      c.ffn_variant = FfnVariant::plain;
    } else if (variant == "gated") {
      c.ffn_variant = FfnVariant::gated;
    } else {
      throw ConfigError("unknown ffn_variant '" + variant + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("transformer config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

template <typename S>
BasicTensor<S> normal_matrix(std::int64_t rows, std::int64_t cols, double stddev,
                             std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<S> data(static_cast<std::size_t>(rows * cols));
  for (auto& v : data) v = static_cast<S>(dist(rng));
  return BasicTensor<S>::from_data({rows, cols}, std::move(data));
}

template <typename S>
void push(std::vector<BasicNamedTensor<S>>& out, std::string name, const BasicTensor<S>& t) {
  if (t.defined()) out.push_back({std::move(name), t});
}

}  // namespace

template <typename S>
BasicBlock<S> BasicBlock<S>::initialize(const TransformerConfig& config, std::mt19937_64& rng,
                                        double init_std, double out_std) {
  const std::int64_t d = config.embed_dim;
  const std::int64_t h = config.ffn_hidden_dim;
  BasicBlock block;
  block.ln1_gamma = BasicTensor<S>::full({d}, S(1));
  block.ln1_beta = BasicTensor<S>::zeros({d});
  block.w_query = normal_matrix<S>(d, d, init_std, rng);
  block.w_key = normal_matrix<S>(d, d, init_std, rng);
  block.w_value = normal_matrix<S>(d, d, init_std, rng);
  block.w_out = normal_matrix<S>(d, d, out_std, rng);
  block.ln2_gamma = BasicTensor<S>::full({d}, S(1));
  block.ln2_beta = BasicTensor<S>::zeros({d});
  block.w_ffn_act = normal_matrix<S>(d, h, init_std, rng);
  if (config.ffn_variant == FfnVariant::gated) block.w_ffn_lin = normal_matrix<S>(d, h, init_std, rng);
  block.w_ffn_down = normal_matrix<S>(h, d, out_std, rng);
  return block;
}

template <typename S>
void BasicBlock<S>::make_identity() {
  for (auto& v : w_out.data()) v = S(0);
  for (auto& v : w_ffn_down.data()) v = S(0);
}

template <typename S>
std::vector<BasicNamedTensor<S>> BasicBlock<S>::named_parameters(const std::string& prefix) const {
  std::vector<BasicNamedTensor<S>> out;
  push(out, prefix + "ln1.gamma", ln1_gamma);
  push(out, prefix + "ln1.beta", ln1_beta);
  push(out, prefix + "attn.w_q", w_query);
  push(out, prefix + "attn.w_k", w_key);
  push(out, prefix + "attn.w_v", w_value);
  push(out, prefix + "attn.w_o", w_out);
  push(out, prefix + "ln2.gamma", ln2_gamma);
  push(out, prefix + "ln2.beta", ln2_beta);
  push(out, prefix + "ffn.w_act", w_ffn_act);
  push(out, prefix + "ffn.w_lin", w_ffn_lin);
  push(out, prefix + "ffn.w_down", w_ffn_down);
  return out;
}

template <typename S>
template <typename Other>
BasicBlock<Other> BasicBlock<S>::cast() const {
  auto c = [](const BasicTensor<S>& t) {
    return t.defined() ? t.template cast<Other>() : BasicTensor<Other>();
  };
  BasicBlock<Other> b;
  b.ln1_gamma = c(ln1_gamma);
  b.ln1_beta = c(ln1_beta);
  b.w_query = c(w_query);
  b.w_key = c(w_key);
  b.w_value = c(w_value);
  b.w_out = c(w_out);
  b.ln2_gamma = c(ln2_gamma);
  b.ln2_beta = c(ln2_beta);
  b.w_ffn_act = c(w_ffn_act);
  b.w_ffn_lin = c(w_ffn_lin);
  b.w_ffn_down = c(w_ffn_down);
  return b;
}

template <typename S>
BasicTensor<S> block_forward(const BasicBlock<S>& block, const TransformerConfig& config,
                             const BasicTensor<S>& x, std::int64_t batch, bool causal) {
  if (batch < 1 || x.rank() != 2 || x.dim(0) % batch != 0 || x.dim(0) == 0) {
    throw DimensionError("block_forward: input " + shape_str(x.shape()) + " does not hold " +
                         std::to_string(batch) + " non-empty sequences");
  }
  const std::int64_t seq_len = x.dim(0) / batch;
  if (seq_len > config.max_seq_len) {
    throw DimensionError("sequence length " + std::to_string(seq_len) + " exceeds max_seq_len " +
                         std::to_string(config.max_seq_len));
  }
  const auto eps = static_cast<S>(config.layer_norm_eps);

  const auto h = layer_norm(x, block.ln1_gamma, block.ln1_beta, eps);
  const auto attn = attention(matmul(h, block.w_query), matmul(h, block.w_key),
                              matmul(h, block.w_value), batch, config.num_heads, causal);
  const auto z = add(x, matmul(attn, block.w_out));

  const auto h2 = layer_norm(z, block.ln2_gamma, block.ln2_beta, eps);
  BasicTensor<S> hidden;
  if (config.ffn_variant == FfnVariant::gated) {
    hidden = mul(silu(matmul(h2, block.w_ffn_act)), matmul(h2, block.w_ffn_lin));
  } else {
    hidden = gelu(matmul(h2, block.w_ffn_act));
  }
  return add(z, matmul(hidden, block.w_ffn_down));
}

template <typename S>
BasicCausalLM<S> BasicCausalLM<S>::initialize(const TransformerConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  constexpr double kInitStd = 0.02;
  const double out_std = kInitStd / std::sqrt(2.0 * std::max<std::int64_t>(config.num_layers, 1));
  BasicCausalLM lm;
  lm.config = config;
  lm.token_embedding = normal_matrix<S>(config.vocab_size, config.embed_dim, kInitStd, rng);
  lm.position_embedding = normal_matrix<S>(config.max_seq_len, config.embed_dim, kInitStd, rng);
  for (std::int64_t i = 0; i < config.num_layers; ++i) {
    lm.blocks.push_back(BasicBlock<S>::initialize(config, rng, kInitStd, out_std));
  }
  lm.final_ln_gamma = BasicTensor<S>::full({config.embed_dim}, S(1));
  lm.final_ln_beta = BasicTensor<S>::zeros({config.embed_dim});
  return lm;
}

template <typename S>
std::vector<BasicNamedTensor<S>> BasicCausalLM<S>::named_parameters() const {
  std::vector<BasicNamedTensor<S>> out;
  push(out, "token_embedding", token_embedding);
  push(out, "position_embedding", position_embedding);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    auto named = blocks[i].named_parameters("blocks." + std::to_string(i) + ".");
    out.insert(out.end(), named.begin(), named.end());
  }
  push(out, "final_ln.gamma", final_ln_gamma);
  push(out, "final_ln.beta", final_ln_beta);
  return out;
}

template <typename S>
std::vector<BasicTensor<S>> BasicCausalLM<S>::parameters() const {
  std::vector<BasicTensor<S>> out;
  for (auto& n : named_parameters()) out.push_back(n.tensor);
  return out;
}

template <typename S>
void BasicCausalLM<S>::set_trainable(bool trainable) {
  for (auto& p : parameters()) p.set_requires_grad(trainable);
}

template <typename S>
std::uint64_t BasicCausalLM<S>::weights_checksum() const {
  const auto named = named_parameters();
  return checksum<S>(std::span<const BasicNamedTensor<S>>(named));
}

template <typename S>
template <typename Other>
BasicCausalLM<Other> BasicCausalLM<S>::cast() const {
  BasicCausalLM<Other> lm;
  lm.config = config;
  lm.token_embedding = token_embedding.template cast<Other>();
  lm.position_embedding = position_embedding.template cast<Other>();
  for (const auto& b : blocks) lm.blocks.push_back(b.template cast<Other>());
  lm.final_ln_gamma = final_ln_gamma.template cast<Other>();
  lm.final_ln_beta = final_ln_beta.template cast<Other>();
  return lm;
}

template <typename S>
BasicTensor<S> embed(const BasicCausalLM<S>& lm, std::span<const TokenId> tokens) {
  return embedding(lm.token_embedding, tokens);
}

template <typename S>
BasicTensor<S> forward_hidden(const BasicCausalLM<S>& lm, const BasicTensor<S>& seq,
                              std::int64_t batch) {
  if (seq.rank() != 2 || seq.dim(1) != lm.config.embed_dim) {
    throw DimensionError("forward: embedded input " + shape_str(seq.shape()) +
                         " does not have width " + std::to_string(lm.config.embed_dim));
  }
  if (batch < 1 || seq.dim(0) % batch != 0 || seq.dim(0) == 0) {
    throw DimensionError("forward: " + std::to_string(seq.dim(0)) + " rows do not form " +
                         std::to_string(batch) + " non-empty sequences");
  }
  const std::int64_t seq_len = seq.dim(0) / batch;
  if (seq_len > lm.config.max_seq_len) {
    throw DimensionError("sequence length " + std::to_string(seq_len) + " exceeds max_seq_len " +
                         std::to_string(lm.config.max_seq_len));
  }
  auto x = add_positional(seq, lm.position_embedding, seq_len);
  for (const auto& block : lm.blocks) x = block_forward(block, lm.config, x, batch, true);
  return layer_norm(x, lm.final_ln_gamma, lm.final_ln_beta,
                    static_cast<S>(lm.config.layer_norm_eps));
}

template <typename S>
BasicTensor<S> lm_head(const BasicCausalLM<S>& lm, const BasicTensor<S>& hidden) {
  return matmul_nt(hidden, lm.token_embedding);
}

template <typename S>
BasicTensor<S> forward_embedded(const BasicCausalLM<S>& lm, const BasicTensor<S>& seq,
                                std::int64_t batch) {
  return lm_head(lm, forward_hidden(lm, seq, batch));
}

template <typename S>
BasicTensor<S> forward_tokens(const BasicCausalLM<S>& lm, std::span<const TokenId> tokens,
                              std::int64_t batch) {
  return forward_embedded(lm, embed(lm, tokens), batch);
}

void save_checkpoint(const TargetLM& lm, const std::filesystem::path& path,
                     const nlohmann::json& extra) {
  nlohmann::json fields = extra.is_object() ? extra : nlohmann::json::object();
  fields["kind"] = "target_lm";
  fields["config"] = to_json(lm.config);
  const auto named = lm.named_parameters();
  write_dspx(path, fields, named);
}

LoadedTarget load_checkpoint(const std::filesystem::path& path) {
  auto file = read_dspx(path);
  if (file.header.value("kind", std::string()) != "target_lm") {
    throw FormatError("checkpoint " + path.string() + " is not a target_lm checkpoint");
  }
  if (!file.header.contains("config")) throw FormatError("checkpoint header lacks config");
  const auto config = transformer_config_from_json(file.header["config"]);
  auto lm = TargetLM::initialize(config, 0);
  const auto named = lm.named_parameters();
  if (named.size() != file.tensors.size()) {
    throw FormatError("checkpoint holds " + std::to_string(file.tensors.size()) +
                      " tensors, model expects " + std::to_string(named.size()));
  }
  for (auto n : named) {
    const auto& src = file.tensor(n.name);
    if (src.shape() != n.tensor.shape()) {
      throw FormatError("tensor '" + n.name + "' has shape " + shape_str(src.shape()) +
                        ", expected " + shape_str(n.tensor.shape()));
    }
    std::copy(src.data().begin(), src.data().end(), n.tensor.data().begin());
  }
  return {std::move(lm), std::move(file.header)};
}

#define MEMPROBE_INSTANTIATE(S)                                                                  \
  template struct BasicBlock<S>;                                                                 \
  template struct BasicCausalLM<S>;                                                              \
  template BasicTensor<S> block_forward(const BasicBlock<S>&, const TransformerConfig&,          \
                                        const BasicTensor<S>&, std::int64_t, bool);              \
  template BasicTensor<S> embed(const BasicCausalLM<S>&, std::span<const TokenId>);              \
  template BasicTensor<S> forward_hidden(const BasicCausalLM<S>&, const BasicTensor<S>&,         \
                                         std::int64_t);                                          \
  template BasicTensor<S> lm_head(const BasicCausalLM<S>&, const BasicTensor<S>&);               \
  template BasicTensor<S> forward_embedded(const BasicCausalLM<S>&, const BasicTensor<S>&,       \
                                           std::int64_t);                                        \
  template BasicTensor<S> forward_tokens(const BasicCausalLM<S>&, std::span<const TokenId>,      \
                                         std::int64_t);

MEMPROBE_INSTANTIATE(float)
MEMPROBE_INSTANTIATE(double)

#undef MEMPROBE_INSTANTIATE

template BasicBlock<double> BasicBlock<float>::cast<double>() const;
template BasicBlock<float> BasicBlock<double>::cast<float>() const;
template BasicCausalLM<double> BasicCausalLM<float>::cast<double>() const;
template BasicCausalLM<float> BasicCausalLM<double>::cast<float>() const;

}  // namespace memprobe
