// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>

#include "memprobe/checkpoint.hpp"
#include "memprobe/error.hpp"
#include "memprobe/prompt.hpp"
#include "oracles.hpp"

using namespace memprobe;

namespace {

TransformerConfig tiny() {
  TransformerConfig c;
  c.vocab_size = 24;
  c.embed_dim = 8;
  c.num_heads = 2;
  c.num_layers = 1;
  c.max_seq_len = 32;
  c.ffn_hidden_dim = 16;
  return c;
}

TargetLM frozen_target(std::uint64_t seed = 1) {
  auto lm = TargetLM::initialize(tiny(), seed);
  lm.set_trainable(false);
  return lm;
}

Corpus tiny_corpus() {
  auto c = generate_corpus(24, 24, 10, std::vector<DupTier>{{12, 1}, {12, 4}}, 3);
  c.splits = sample_splits(c, 12, 8, 3);
  return c;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.data().size_bytes()) == 0;
}

std::vector<TokenId> random_tokens(std::size_t n, std::mt19937_64& rng, int vocab = 24) {
  std::vector<TokenId> v(n);
  for (auto& t : v) t = static_cast<TokenId>(rng() % static_cast<unsigned>(vocab));
  return v;
}

bool all_zero(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](float v) { return v == 0.0f; });
}

}  // namespace

TEST(MapPrefix, Examples) {
  const std::vector<TokenId> six{1, 2, 3, 4, 5, 6};
  EXPECT_EQ(map_prefix(six, 4), (std::vector<TokenId>{3, 4, 5, 6}));
  const std::vector<TokenId> abc{10, 11, 12};
  EXPECT_EQ(map_prefix(abc, 5), (std::vector<TokenId>{11, 12, 10, 11, 12}));
  EXPECT_EQ(map_prefix(abc, 3), abc);
  EXPECT_EQ(map_prefix(abc, 7), (std::vector<TokenId>{12, 10, 11, 12, 10, 11, 12}));
  EXPECT_THROW(map_prefix(std::vector<TokenId>{}, 3), MappingError);
  EXPECT_THROW(map_prefix(abc, 0), MappingError);
}

TEST(MapPrefix, TotalOverGrid) {
  for (int L = 1; L <= 64; ++L) {
    std::vector<TokenId> p(static_cast<std::size_t>(L));
    for (int i = 0; i < L; ++i) p[static_cast<std::size_t>(i)] = static_cast<TokenId>(100 + i);
    for (int N = 1; N <= 64; ++N) {
      const auto m = map_prefix(p, N);
      ASSERT_EQ(static_cast<int>(m.size()), N);
      // Every output is the last N tokens of p repeated enough times.
      for (int j = 0; j < N; ++j) {
        const int from_end = N - 1 - j;
        ASSERT_EQ(m[static_cast<std::size_t>(j)], p[static_cast<std::size_t>((L - 1 - from_end % L))]);
      }
    }
  }
}

TEST(Generator, InitialisationIsIdentity) {
  const auto target = frozen_target();
  const auto g = init_generator(target, 2, 5, 7);
  EXPECT_EQ(g.num_blocks(), 2);
  EXPECT_EQ(g.prompt_len, 5);
  for (const auto& b : g.blocks) {
    EXPECT_TRUE(all_zero(b.w_out));
    EXPECT_TRUE(all_zero(b.w_ffn_down));
    EXPECT_FALSE(all_zero(b.w_query));
  }
  EXPECT_TRUE(all_zero(g.position_embedding));
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const auto p = random_tokens(1 + rng() % 12, rng);
    const auto o = generate_soft_prompt(g, p);
    EXPECT_EQ(o.dim(0), 5);
    EXPECT_EQ(o.dim(1), 8);
    EXPECT_TRUE(bit_equal(o, embed(target, map_prefix(p, 5))));
  }
}

TEST(Generator, ConfigurationLimits) {
  const auto target = frozen_target();
  EXPECT_THROW(init_generator(target, 0, 4, 0), ConfigError);
  EXPECT_THROW(init_generator(target, kMaxGeneratorBlocks + 1, 4, 0), ConfigError);
  EXPECT_THROW(init_generator(target, 1, 0, 0), ConfigError);
  EXPECT_NO_THROW(init_generator(target, kMaxGeneratorBlocks, 4, 0));
}

TEST(Generator, DeterministicPerPrefix) {
  const auto target = frozen_target();
  auto g = init_generator(target, 1, 4, 3);
  for (auto& v : g.blocks[0].w_out.data()) v = 0.05f;
  const std::vector<TokenId> a{1, 2, 3};
  const std::vector<TokenId> b{1, 2, 4};
  EXPECT_TRUE(bit_equal(generate_soft_prompt(g, a), generate_soft_prompt(g, a)));
  EXPECT_FALSE(bit_equal(generate_soft_prompt(g, a), generate_soft_prompt(g, b)));
  const std::vector<std::vector<TokenId>> both{a, b};
  const auto batched = generate_soft_prompts(g, both);
  EXPECT_TRUE(bit_equal(slice_rows(batched, 4, 4), generate_soft_prompt(g, b)));
}

TEST(MethodInput, Layouts) {
  const auto target = frozen_target();
  const std::vector<TokenId> p{5, 6, 7, 8};
  const auto none = build_method_input(ExtractionMethod::none(), target, p);
  EXPECT_EQ(none.dim(0), 4);
  EXPECT_TRUE(bit_equal(none, embed(target, p)));

  const auto hc = build_method_input(ExtractionMethod::hard_const(3), target, p);
  EXPECT_EQ(hc.dim(0), 7);
  EXPECT_TRUE(bit_equal(slice_rows(hc, 0, 3), embed(target, std::vector<TokenId>{0, 1, 2})));
  EXPECT_TRUE(bit_equal(slice_rows(hc, 3, 4), embed(target, p)));

  const auto hd = build_method_input(ExtractionMethod::hard_dyn(6), target, p);
  EXPECT_TRUE(bit_equal(slice_rows(hd, 0, 6), embed(target, map_prefix(p, 6))));

  const auto dyn = build_method_input(ExtractionMethod::dynamic(init_generator(target, 2, 6, 1)), target, p);
  EXPECT_TRUE(bit_equal(dyn, hd));

  auto csp = init_constant_prompt(target, 3);
  EXPECT_TRUE(bit_equal(csp.prompt, slice_rows(hc, 0, 3)));
  const auto method = ExtractionMethod::csp(csp);
  const std::vector<std::vector<TokenId>> prefixes{p, {1, 1, 1, 1}, {23, 0, 9, 4}};
  const auto rows = build_method_inputs(method, target, prefixes);
  for (int i = 0; i < 3; ++i) EXPECT_TRUE(bit_equal(slice_rows(rows, i * 7, 3), csp.prompt));
  EXPECT_EQ(method.prompt_len(), 3);
  EXPECT_EQ(ExtractionMethod::none().prompt_len(), 0);
}

TEST(MethodInput, PayloadMustMatchTag) {
  const auto target = frozen_target();
  ExtractionMethod bad;
  bad.tag = MethodTag::csp;
  bad.payload = std::int64_t{3};
  EXPECT_THROW(bad.validate(), MethodError);
  EXPECT_THROW(build_method_input(bad, target, std::vector<TokenId>{1}), MethodError);
  EXPECT_THROW(parse_method_tag("soft"), MethodError);
  for (auto tag : {MethodTag::none, MethodTag::hard_const, MethodTag::hard_dyn, MethodTag::csp, MethodTag::dynamic}) {
    EXPECT_EQ(parse_method_tag(to_string(tag)), tag);
  }
  EXPECT_THROW(build_method_input(ExtractionMethod::hard_const(25), target, std::vector<TokenId>{1}), ConfigError);
}

TEST(AlignedLoss, TrainingInputLayout) {
  const auto target = frozen_target();
  const std::vector<SequenceSplit> batch{{{1, 2, 3}, {4, 5}, 0}, {{6, 7, 8}, {9, 10}, 1}};
  const auto in = build_training_input(ExtractionMethod::hard_dyn(4), target, batch);
  EXPECT_EQ(in.batch, 2);
  EXPECT_EQ(in.suffix_start, 7);
  EXPECT_EQ(in.seq_len(), 9);
  ASSERT_EQ(in.position_tokens.size(), 18u);
  EXPECT_EQ(in.position_tokens[4], 1);
  EXPECT_EQ(in.position_tokens[7], 4);
  EXPECT_EQ(in.position_tokens[9 + 8], 10);
  EXPECT_TRUE(bit_equal(slice_rows(in.embedded, 9 + 7, 2), embed(target, std::vector<TokenId>{9, 10})));
  EXPECT_TRUE(bit_equal(slice_rows(in.embedded, 9, 4), embed(target, map_prefix(batch[1].prefix, 4))));
}

TEST(AlignedLoss, ScoresExactlyTheSuffixPositions) {
  const auto target = frozen_target(5);
  const std::vector<SequenceSplit> batch{{{1, 2, 3}, {4, 5, 6}, 0}, {{7, 8, 9}, {10, 11, 12}, 1}};
  const auto method = ExtractionMethod::hard_const(2);
  const auto in = build_training_input(method, target, batch);
  const auto loss = aligned_clm_loss(target, in).item();

  const auto logits = oracle::to_matrix(forward_embedded(target, in.embedded, in.batch));
  const std::int64_t T = in.seq_len();
  double total = 0;
  for (std::int64_t b = 0; b < 2; ++b) {
    for (std::int64_t j = 0; j < 3; ++j) {
      const auto row = b * T + in.suffix_start - 1 + j;
      total += oracle::neg_log_softmax(logits[static_cast<std::size_t>(row)],
                                       static_cast<std::size_t>(batch[b].suffix[j]));
    }
  }
  EXPECT_NEAR(loss, total / 6, 1e-6);
}

TEST(AlignedLoss, InvariantToPromptAndPrefixTargets) {
  const auto target = frozen_target(6);
  const std::vector<SequenceSplit> batch{{{1, 2, 3, 4}, {5, 6}, 0}};
  auto in = build_training_input(ExtractionMethod::hard_dyn(3), target, batch);
  const float base = aligned_clm_loss(target, in).item();
  for (std::int64_t i = 0; i < in.suffix_start; ++i) in.position_tokens[i] = 23;
  const float moved = aligned_clm_loss(target, in).item();
  EXPECT_EQ(std::memcmp(&base, &moved, sizeof base), 0);
}

TEST(AlignedLoss, SinglePositionOracle) {
  // One layer, N = 1, L = 1, S = 1: the loss is -log softmax of the last
  // logit row at the suffix token.
  auto config = tiny();
  config.vocab_size = 6;
  config.embed_dim = 4;
  config.ffn_hidden_dim = 4;
  auto target = TargetLM::initialize(config, 9);
  target.set_trainable(false);
  auto csp = init_constant_prompt(target, 1, CspInit::normal, 4, 0.7);
  const std::vector<SequenceSplit> batch{{{3}, {5}, 0}};
  const auto method = ExtractionMethod::csp(csp);
  const float loss = aligned_clm_loss(target, build_training_input(method, target, batch)).item();

  const auto seq = build_method_input(method, target, std::vector<TokenId>{3});
  ASSERT_EQ(seq.dim(0), 2);
  const auto logits = oracle::to_matrix(forward_embedded(target, seq));
  EXPECT_NEAR(loss, oracle::neg_log_softmax(logits[1], 5), 1e-6);
}

TEST(AlignedLoss, EmptySuffixRejected) {
  const auto target = frozen_target();
  const std::vector<SequenceSplit> batch{{{1, 2}, {}, 0}};
  EXPECT_THROW(build_training_input(ExtractionMethod::none(), target, batch), ContractError);
}

TEST(PromptTraining, GeneratorKeepsTargetFrozenAndLearns) {
  const auto target = frozen_target(2);
  const auto corpus = tiny_corpus();
  auto g = init_generator(target, 2, 4, 1);
  PromptTrainConfig config;
  config.epochs = 8;
  config.batch_size = 4;
  config.lr = 1e-2;
  config.prefix_len = 5;
  const auto before = target.weights_checksum();
  const double untrained = evaluate_aligned_loss(ExtractionMethod::dynamic(g), target, corpus,
                                                 corpus.splits.train_ids, 5, 4);
  const auto r = train_generator(g, target, corpus, corpus.splits.train_ids, config);
  EXPECT_EQ(target.weights_checksum(), before);
  EXPECT_EQ(r.target_checksum_before, before);
  EXPECT_EQ(r.target_checksum_after, before);
  ASSERT_EQ(r.loss_curve.size(), 9u);
  EXPECT_EQ(r.loss_curve[0], untrained);
  EXPECT_LT(r.final_loss, r.loss_curve[0]);
  for (const auto& b : g.blocks) EXPECT_FALSE(all_zero(b.w_out));
  for (auto id : r.consumed_ids) {
    EXPECT_TRUE(std::binary_search(corpus.splits.train_ids.begin(), corpus.splits.train_ids.end(), id));
  }
  EXPECT_EQ(r.consumed_ids.size(), corpus.splits.train_ids.size());
}

TEST(PromptTraining, DeterministicPerSeed) {
  const auto target = frozen_target(2);
  const auto corpus = tiny_corpus();
  PromptTrainConfig config;
  config.epochs = 2;
  config.batch_size = 5;
  config.prefix_len = 5;
  config.seed = 11;
  auto a = init_generator(target, 1, 3, 11);
  auto b = init_generator(target, 1, 3, 11);
  const auto ra = train_generator(a, target, corpus, corpus.splits.train_ids, config);
  const auto rb = train_generator(b, target, corpus, corpus.splits.train_ids, config);
  EXPECT_EQ(a.weights_checksum(), b.weights_checksum());
  EXPECT_EQ(ra.loss_curve, rb.loss_curve);
}

TEST(PromptTraining, RequiresFrozenTarget) {
  auto target = TargetLM::initialize(tiny(), 1);
  target.set_trainable(true);
  const auto corpus = tiny_corpus();
  auto csp = init_constant_prompt(target, 2);
  PromptTrainConfig config;
  config.prefix_len = 5;
  EXPECT_THROW(train_csp(csp, target, corpus, corpus.splits.train_ids, config), ContractError);
}

TEST(PromptTraining, CspGradientIsLive) {
  const auto target = frozen_target(3);
  auto csp = init_constant_prompt(target, 3);
  const std::vector<SequenceSplit> batch{{{1, 2, 3}, {4, 5}, 0}, {{9, 9, 9}, {1, 0}, 1}};
  Tape tape;
  {
    TapeScope<float> scope(tape);
    auto loss = aligned_clm_loss(target, build_training_input(ExtractionMethod::csp(csp), target, batch));
    tape.backward(loss);
  }
  ASSERT_TRUE(csp.prompt.has_grad());
  float mx = 0;
  for (float v : csp.prompt.grad()) mx = std::max(mx, std::abs(v));
  EXPECT_GT(mx, 0.0f);
}

TEST(PromptTraining, CspStaysConstantAcrossInputs) {
  const auto target = frozen_target(3);
  const auto corpus = tiny_corpus();
  auto csp = init_constant_prompt(target, 2);
  PromptTrainConfig config;
  config.epochs = 2;
  config.batch_size = 4;
  config.prefix_len = 5;
  const auto before = target.weights_checksum();
  train_csp(csp, target, corpus, corpus.splits.train_ids, config);
  EXPECT_EQ(target.weights_checksum(), before);
  const std::vector<std::vector<TokenId>> prefixes{{1, 2, 3}, {4, 5, 6}};
  const auto rows = build_method_inputs(ExtractionMethod::csp(csp), target, prefixes);
  EXPECT_TRUE(bit_equal(slice_rows(rows, 0, 2), slice_rows(rows, 5, 2)));
}

TEST(MethodCheckpoint, RoundTrips) {
  const auto dir = std::filesystem::temp_directory_path() / "memprobe_method_test";
  std::filesystem::create_directories(dir);
  const auto target = frozen_target(4);
  auto g = init_generator(target, 2, 4, 3);
  for (auto& v : g.blocks[1].w_out.data()) v = 0.125f;
  save_method(ExtractionMethod::dynamic(g), dir / "g.dspx", {{"final_train_loss", 1.5}});
  const auto loaded = load_method(dir / "g.dspx", target);
  EXPECT_EQ(loaded.method.tag, MethodTag::dynamic);
  EXPECT_EQ(std::get<Generator>(loaded.method.payload).weights_checksum(), g.weights_checksum());
  EXPECT_EQ(loaded.header.at("final_train_loss"), 1.5);

  const auto csp = init_constant_prompt(target, 3, CspInit::normal, 2);
  save_method(ExtractionMethod::csp(csp), dir / "c.dspx");
  const auto file = read_dspx(dir / "c.dspx");
  ASSERT_EQ(file.tensors.size(), 1u);
  EXPECT_EQ(file.tensors[0].tensor.shape(), (Shape{3, 8}));
  EXPECT_EQ(file.header.at("method_tag"), "csp");
  EXPECT_TRUE(bit_equal(std::get<ConstantSoftPrompt>(load_method(dir / "c.dspx", target).method.payload).prompt,
                        csp.prompt));

  auto wide_config = tiny();
  wide_config.embed_dim = 12;
  wide_config.num_heads = 3;
  const auto wide = TargetLM::initialize(wide_config, 1);
  EXPECT_THROW(load_method(dir / "c.dspx", wide), FormatError);
  EXPECT_THROW(load_method(dir / "g.dspx", wide), FormatError);
  EXPECT_THROW(save_method(ExtractionMethod::hard_dyn(3), dir / "h.dspx"), MethodError);
  std::filesystem::remove_all(dir);
}
