// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>

#include "memprobe/checkpoint.hpp"
#include "memprobe/error.hpp"
#include "memprobe/transformer.hpp"
#include "oracles.hpp"

using namespace memprobe;

namespace {

TransformerConfig small(FfnVariant variant = FfnVariant::plain) {
  TransformerConfig c;
  c.vocab_size = 20;
  c.embed_dim = 8;
  c.num_heads = 2;
  c.num_layers = 2;
  c.max_seq_len = 12;
  c.ffn_hidden_dim = 16;
  c.ffn_variant = variant;
  return c;
}

Tensor random_rows(std::int64_t rows, std::int64_t d, std::mt19937_64& rng) {
  std::vector<float> v;
  for (double x : oracle::random_vector(static_cast<std::size_t>(rows * d), rng)) v.push_back(static_cast<float>(x));
  return Tensor::from_data({rows, d}, v);
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.data().size_bytes()) == 0;
}

}  // namespace

TEST(TransformerConfig, Validation) {
  auto c = small();
  EXPECT_NO_THROW(c.validate());
  c.num_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small();
  c.vocab_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(transformer_config_from_json(to_json(small(FfnVariant::gated))), small(FfnVariant::gated));
}

TEST(TransformerConfig, DefaultsDescribeTheDeskModel) {
  const TransformerConfig c;
  EXPECT_EQ(c.vocab_size, 512);
  EXPECT_EQ(c.embed_dim, 128);
  EXPECT_EQ(c.num_heads, 4);
  EXPECT_EQ(c.num_layers, 4);
  EXPECT_EQ(c.head_dim(), 32);
}

TEST(Block, IdentityWhenOutputProjectionsZero) {
  std::mt19937_64 rng(1);
  for (auto variant : {FfnVariant::plain, FfnVariant::gated}) {
    const auto c = small(variant);
    auto block = Block::initialize(c, rng, 0.5, 0.5);
    block.make_identity();
    const auto x = random_rows(10, 8, rng);
    EXPECT_TRUE(bit_equal(block_forward(block, c, x, 2, true), x));
    EXPECT_TRUE(bit_equal(block_forward(block, c, x, 1, false), x));
  }
}

TEST(Block, GatedVariantIdentityNeedsOnlyDownProjection) {
  // Zeroing only the linear branch W2 also zeroes the gated product, so the
  // identity hinges on W_O and the down projection W3.
  std::mt19937_64 rng(2);
  const auto c = small(FfnVariant::gated);
  auto block = Block::initialize(c, rng, 0.5, 0.5);
  std::fill(block.w_out.data().begin(), block.w_out.data().end(), 0.0f);
  std::fill(block.w_ffn_lin.data().begin(), block.w_ffn_lin.data().end(), 0.0f);
  const auto x = random_rows(4, 8, rng);
  EXPECT_TRUE(bit_equal(block_forward(block, c, x, 1, true), x));
  EXPECT_EQ(block.named_parameters("b").size(), 11u);
  EXPECT_EQ(Block::initialize(small(), rng, 0.1, 0.1).named_parameters("b").size(), 10u);
}

TEST(Block, MatchesHandWrittenForward) {
  std::mt19937_64 rng(3);
  auto c = small(FfnVariant::plain);
  auto block = BasicBlock<double>::initialize(c, rng, 0.4, 0.4);
  std::vector<double> xs = oracle::random_vector(4 * 8, rng);
  const auto x = Tensor64::from_data({4, 8}, xs);
  const auto y = block_forward(block, c, x, 1, true);

  const auto X = oracle::to_matrix(x);
  const auto ln = [](const oracle::Matrix& m, const Tensor64& g, const Tensor64& b) {
    oracle::Matrix out = m;
    for (auto& row : out) {
      double mean = 0;
      for (double v : row) mean += v / row.size();
      double var = 0;
      for (double v : row) var += (v - mean) * (v - mean) / row.size();
      for (std::size_t j = 0; j < row.size(); ++j) {
        row[j] = g.data()[j] * (row[j] - mean) / std::sqrt(var + 1e-5) + b.data()[j];
      }
    }
    return out;
  };
  const auto add = [](oracle::Matrix a, const oracle::Matrix& b) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
    }
    return a;
  };
  const auto h = ln(X, block.ln1_gamma, block.ln1_beta);
  const auto attn = oracle::attention(oracle::matmul(h, oracle::to_matrix(block.w_query)),
                                      oracle::matmul(h, oracle::to_matrix(block.w_key)),
                                      oracle::matmul(h, oracle::to_matrix(block.w_value)), 2, true);
  const auto r1 = add(X, oracle::matmul(attn, oracle::to_matrix(block.w_out)));
  auto hidden = oracle::matmul(ln(r1, block.ln2_gamma, block.ln2_beta), oracle::to_matrix(block.w_ffn_act));
  for (auto& row : hidden) {
    for (auto& v : row) v = oracle::gelu(v);
  }
  const auto want = add(r1, oracle::matmul(hidden, oracle::to_matrix(block.w_ffn_down)));
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 8; ++j) EXPECT_NEAR(y.at(i, j), want[i][j], 1e-12);
  }
}

TEST(CausalLM, EmbeddedAndTokenPathsAgree) {
  const auto lm = TargetLM::initialize(small(), 4);
  const std::vector<TokenId> tokens{1, 5, 7, 19, 0, 3};
  EXPECT_TRUE(bit_equal(forward_embedded(lm, embed(lm, tokens), 2), forward_tokens(lm, tokens, 2)));
}

TEST(CausalLM, EmbedIsTableLookup) {
  const auto lm = TargetLM::initialize(small(), 5);
  const std::vector<TokenId> tokens{7, 7};
  const auto e = embed(lm, tokens);
  for (int j = 0; j < 8; ++j) {
    EXPECT_EQ(e.at(0, j), lm.token_embedding.at(7, j));
    EXPECT_EQ(e.at(1, j), e.at(0, j));
  }
  EXPECT_EQ(embed(lm, std::span<const TokenId>()).dim(0), 0);
}

TEST(CausalLM, CausalityAndNormalisation) {
  const auto lm = TargetLM::initialize(small(FfnVariant::gated), 6);
  std::mt19937_64 rng(6);
  auto seq = random_rows(6, 8, rng);
  const auto base = forward_embedded(lm, seq);
  for (std::int64_t j = 0; j < 6; ++j) {
    auto moved = seq.clone();
    for (int c = 0; c < 8; ++c) moved.data()[j * 8 + c] += 0.25f * static_cast<float>(c + 1);
    const auto out = forward_embedded(lm, moved);
    for (std::int64_t i = 0; i < 6; ++i) {
      bool same = true;
      for (int v = 0; v < 20; ++v) same = same && out.at(i, v) == base.at(i, v);
      EXPECT_EQ(same, i < j) << "row " << i << " after perturbing " << j;
    }
  }
  const auto probs = softmax_rows(base);
  for (std::int64_t i = 0; i < 6; ++i) {
    double total = 0;
    for (int v = 0; v < 20; ++v) total += probs.at(i, v);
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(CausalLM, SingleTokenShapeAndPrefixDeterminism) {
  const auto lm = TargetLM::initialize(small(), 7);
  const std::vector<TokenId> one{4};
  const auto logits = forward_tokens(lm, one);
  EXPECT_EQ(logits.dim(0), 1);
  EXPECT_EQ(logits.dim(1), 20);
  const std::vector<TokenId> a{1, 2, 3, 4};
  const std::vector<TokenId> b{1, 2, 3, 9};
  const auto la = forward_tokens(lm, a);
  const auto lb = forward_tokens(lm, b);
  EXPECT_TRUE(bit_equal(slice_rows(la, 0, 3), slice_rows(lb, 0, 3)));
}

TEST(CausalLM, RejectsOverlongSequences) {
  const auto lm = TargetLM::initialize(small(), 8);
  const std::vector<TokenId> tokens(13, 1);
  EXPECT_THROW(forward_tokens(lm, tokens), DimensionError);
}

TEST(CausalLM, FreezeAndChecksum) {
  auto lm = TargetLM::initialize(small(), 9);
  lm.set_trainable(false);
  for (const auto& p : lm.parameters()) EXPECT_FALSE(p.requires_grad());
  const auto before = lm.weights_checksum();
  Tape tape;
  {
    TapeScope<float> scope(tape);
    const std::vector<TokenId> tokens{1, 2, 3};
    const std::vector<TokenId> targets{2, 3, 4};
    const std::vector<std::uint8_t> mask{1, 1, 1};
    (void)masked_cross_entropy(forward_tokens(lm, tokens), targets, mask);
  }
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_EQ(lm.weights_checksum(), before);
  EXPECT_NE(TargetLM::initialize(small(), 10).weights_checksum(), before);
  EXPECT_EQ(TargetLM::initialize(small(), 9).weights_checksum(), before);
}

TEST(CausalLM, CheckpointRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "memprobe_transformer_test";
  std::filesystem::create_directories(dir);
  const auto lm = TargetLM::initialize(small(FfnVariant::gated), 11);
  save_checkpoint(lm, dir / "a.dspx", {{"note", "x"}});
  const auto loaded = load_checkpoint(dir / "a.dspx");
  EXPECT_EQ(loaded.model.config, lm.config);
  EXPECT_EQ(loaded.model.weights_checksum(), lm.weights_checksum());
  EXPECT_EQ(loaded.header.at("note"), "x");
  save_checkpoint(loaded.model, dir / "b.dspx", {{"note", "x"}});
  EXPECT_EQ(read_file_bytes(dir / "a.dspx"), read_file_bytes(dir / "b.dspx"));
  std::filesystem::remove_all(dir);
}
