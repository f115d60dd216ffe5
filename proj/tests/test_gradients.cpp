// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Every differentiable primitive against central finite differences in
// double precision.

#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "memprobe/ops.hpp"
#include "memprobe/transformer.hpp"
#include "oracles.hpp"
#include "random_network.hpp"

using namespace memprobe;

namespace {

Tensor64 param(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::size_t count = 1;
  for (auto d : shape) count *= static_cast<std::size_t>(d);
  return Tensor64::from_data(std::move(shape), oracle::random_vector(count, rng, scale), true);
}

/// Loss = sum(out * weights) so every output element gets a distinct
/// upstream gradient.
double check(std::vector<Tensor64> inputs, const std::function<Tensor64(std::vector<Tensor64>&)>& op,
             double step = 1e-5, bool five_point = false) {
  std::mt19937_64 rng(99);
  Tensor64 probe;
  const auto loss_fn = [&]() {
    auto out = op(inputs);
    if (!probe.defined()) {
      probe = Tensor64::from_data(out.shape(), oracle::random_vector(static_cast<std::size_t>(out.numel()), rng));
    }
    return sum(mul(out, probe));
  };
  {
    Tape64 tape;
    TapeScope<double> scope(tape);
    auto loss = loss_fn();
    tape.backward(loss);
  }
  double worst = 0;
  for (auto& p : inputs) {
    if (!p.requires_grad()) continue;
    std::vector<double> analytic(static_cast<std::size_t>(p.numel()), 0.0);
    if (p.has_grad()) analytic.assign(p.grad().begin(), p.grad().end());
    const auto numeric = oracle::numeric_gradient(p.data(), [&] { return loss_fn().item(); }, step, five_point);
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      worst = std::max(worst, oracle::relative_error(analytic[i], numeric[i]));
    }
  }
  return worst;
}

constexpr double kTol = 1e-6;

}  // namespace

TEST(Gradients, Matmul) {
  std::mt19937_64 rng(1);
  EXPECT_LT(check({param({3, 4}, rng), param({4, 2}, rng)}, [](auto& v) { return matmul(v[0], v[1]); }), kTol);
  EXPECT_LT(check({param({3, 4}, rng), param({5, 4}, rng)}, [](auto& v) { return matmul_nt(v[0], v[1]); }),
            kTol);
}

TEST(Gradients, Elementwise) {
  std::mt19937_64 rng(2);
  EXPECT_LT(check({param({2, 3}, rng), param({2, 3}, rng)}, [](auto& v) { return add(v[0], v[1]); }), kTol);
  EXPECT_LT(check({param({2, 3}, rng), param({2, 3}, rng)}, [](auto& v) { return mul(v[0], v[1]); }), kTol);
  EXPECT_LT(check({param({2, 3}, rng)}, [](auto& v) { return scale(v[0], -1.7); }), kTol);
  EXPECT_LT(check({param({2, 3}, rng)}, [](auto& v) { return sum(v[0]); }), kTol);
  EXPECT_LT(check({param({2, 3}, rng)}, [](auto& v) { return mul(v[0], v[0]); }), kTol);
}

TEST(Gradients, Nonlinearities) {
  std::mt19937_64 rng(3);
  EXPECT_LT(check({param({3, 5}, rng, 2.0)}, [](auto& v) { return gelu(v[0]); }), kTol);
  EXPECT_LT(check({param({3, 5}, rng, 2.0)}, [](auto& v) { return silu(v[0]); }), kTol);
  EXPECT_LT(check({param({3, 5}, rng, 2.0)}, [](auto& v) { return softmax_rows(v[0]); }), kTol);
}

TEST(Gradients, LayerNorm) {
  std::mt19937_64 rng(4);
  EXPECT_LT(check({param({3, 6}, rng, 2.0), param({6}, rng), param({6}, rng)},
                  [](auto& v) { return layer_norm(v[0], v[1], v[2], 1e-5); }),
            kTol);
}

TEST(Gradients, IndexingAndShapes) {
  std::mt19937_64 rng(5);
  const std::vector<TokenId> ids{2, 0, 2, 1};
  EXPECT_LT(check({param({3, 4}, rng)}, [&](auto& v) { return embedding(v[0], std::span<const TokenId>(ids)); }),
            kTol);
  EXPECT_LT(check({param({4, 3}, rng), param({2, 3}, rng)},
                  [](auto& v) { return add_positional(v[0], v[1], 2); }),
            kTol);
  EXPECT_LT(check({param({2, 3}, rng), param({1, 3}, rng)},
                  [](auto& v) { return concat_rows<double>(std::vector<Tensor64>{v[1], v[0], v[1]}); }),
            kTol);
  EXPECT_LT(check({param({2, 3}, rng), param({2, 1}, rng)},
                  [](auto& v) { return concat_cols<double>(std::vector<Tensor64>{v[0], v[1]}); }),
            kTol);
  EXPECT_LT(check({param({4, 3}, rng)}, [](auto& v) { return slice_rows(v[0], 1, 2); }), kTol);
  EXPECT_LT(check({param({4, 3}, rng)}, [](auto& v) { return slice_cols(v[0], 1, 2); }), kTol);
}

TEST(Gradients, Attention) {
  std::mt19937_64 rng(6);
  for (bool causal : {true, false}) {
    EXPECT_LT(check({param({6, 4}, rng), param({6, 4}, rng), param({6, 4}, rng)},
                    [&](auto& v) { return attention(v[0], v[1], v[2], 2, 2, causal); }),
              kTol);
  }
}

TEST(Gradients, MaskedCrossEntropy) {
  std::mt19937_64 rng(7);
  const std::vector<TokenId> targets{1, 0, 3, 2};
  const std::vector<std::uint8_t> mask{1, 0, 1, 1};
  EXPECT_LT(check({param({4, 4}, rng, 2.0)},
                  [&](auto& v) { return masked_cross_entropy(v[0], targets, mask); }),
            kTol);
}

TEST(Gradients, TransformerBlocks) {
  std::mt19937_64 rng(8);
  for (auto variant : {FfnVariant::plain, FfnVariant::gated}) {
    TransformerConfig config;
    config.vocab_size = 6;
    config.embed_dim = 4;
    config.num_heads = 2;
    config.num_layers = 1;
    config.max_seq_len = 3;
    config.ffn_hidden_dim = 6;
    config.ffn_variant = variant;
    auto block = BasicBlock<double>::initialize(config, rng, 0.5, 0.5);
    auto params = block.named_parameters("b");
    std::vector<Tensor64> inputs{param({6, 4}, rng)};
    for (auto& p : params) {
      p.tensor.set_requires_grad(true);
      inputs.push_back(p.tensor);
    }
    EXPECT_LT(check(inputs, [&](auto& v) { return block_forward(block, config, v[0], 2, true); }), kTol);
  }
}

TEST(Gradients, TwoLayerMlpAtCoarseStep) {
  std::mt19937_64 rng(9);
  std::vector<Tensor64> inputs{param({5, 3}, rng), param({3, 8}, rng, 0.5), param({8, 2}, rng, 0.5)};
  const double err = check(inputs, [](auto& v) { return matmul(gelu(matmul(v[0], v[1])), v[2]); }, 1e-3,
                           true);
  EXPECT_LT(err, 1e-4);
}

TEST(Gradients, RandomComposedNetworks) {
  std::mt19937_64 rng(10);
  for (int i = 0; i < 10; ++i) {
    auto net = testnet::random_network(rng);
    EXPECT_LT(testnet::gradient_error(net, 1e-5), 1e-4) << "network " << i;
  }
}

TEST(Gradients, AccumulateAcrossUses) {
  auto x = Tensor64::from_data({2}, {1.5, -2.0}, true);
  Tape64 tape;
  TapeScope<double> scope(tape);
  auto loss = sum(add(mul(x, x), scale(x, 3.0)));
  backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2 * 1.5 + 3);
  EXPECT_DOUBLE_EQ(x.grad()[1], 2 * -2.0 + 3);
}
