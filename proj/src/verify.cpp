// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "memprobe/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>

#include "memprobe/checkpoint.hpp"
#include "memprobe/error.hpp"
#include "memprobe/prompt.hpp"
#include "memprobe/transformer.hpp"

namespace memprobe {
namespace {

using Loss64 = std::function<Tensor64()>;

Tensor64 random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : data) v = normal(rng);
  return Tensor64::from_data(std::move(shape), std::move(data), true);
}

/// Largest relative disagreement between tape gradients and central
/// differences over every parameter entry.
double max_gradient_error(std::vector<Tensor64>& params, const Loss64& loss_fn) {
  for (auto& p : params) p.zero_grad();
  {
    Tape64 tape;
    TapeScope<double> scope(tape);
    auto loss = loss_fn();
    tape.backward(loss);
  }
  constexpr double kStep = 1e-5;
  double worst = 0;
  for (auto& p : params) {
    const std::vector<double> analytic = p.has_grad()
                                             ? std::vector<double>(p.grad().begin(), p.grad().end())
                                             : std::vector<double>(static_cast<std::size_t>(p.numel()), 0.0);
    auto data = p.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + kStep;
      const double up = loss_fn().item();
      data[i] = saved - kStep;
      const double down = loss_fn().item();
      data[i] = saved;
      const double numeric = (up - down) / (2 * kStep);
      const double scale = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-3});
      worst = std::max(worst, std::abs(numeric - analytic[i]) / scale);
    }
  }
  return worst;
}

CheckResult gradient_check(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0;
  for (int trial = 0; trial < 4; ++trial) {
    const std::int64_t batch = 2;
    const std::int64_t T = 3;
    const std::int64_t d = 4;
    const std::int64_t V = 5;
    std::vector<Tensor64> params{random_tensor({V, d}, rng),     random_tensor({T, d}, rng, 0.1),
                                 random_tensor({d}, rng),        random_tensor({d}, rng),
                                 random_tensor({d, d}, rng, 0.5), random_tensor({d, d}, rng, 0.5),
                                 random_tensor({d, d}, rng, 0.5), random_tensor({2 * d, d}, rng, 0.5)};
    std::uniform_int_distribution<TokenId> token(0, static_cast<TokenId>(V - 1));
    std::vector<TokenId> ids(static_cast<std::size_t>(batch * T));
    std::vector<TokenId> targets(ids.size());
    for (auto& t : ids) t = token(rng);
    for (auto& t : targets) t = token(rng);
    std::vector<std::uint8_t> mask(ids.size(), 1);
    mask[0] = 0;
    const auto loss_fn = [&]() {
      auto x = add_positional(embedding(params[0], ids), params[1], T);
      auto h = layer_norm(x, params[2], params[3], 1e-5);
      auto a = attention(matmul(h, params[4]), matmul(h, params[5]), h, batch, 2, true);
      auto both = std::vector<Tensor64>{gelu(a), silu(mul(a, x))};
      auto wide = concat_cols<double>(both);
      auto y = add(matmul(wide, params[7]), scale(x, 0.5));
      auto rows = std::vector<Tensor64>{slice_rows(y, 0, T), slice_rows(y, T, T)};
      auto z = softmax_rows(matmul(concat_rows<double>(rows), params[6]));
      return masked_cross_entropy(matmul_nt(add(z, slice_cols(y, 0, d)), params[0]), targets, mask);
    };
    worst = std::max(worst, max_gradient_error(params, loss_fn));
  }
  char detail[64];
  std::snprintf(detail, sizeof detail, "max relative error %.3e", worst);
  return {"gradient_check", worst < 1e-4, detail};
}

TransformerConfig tiny_config(FfnVariant variant) {
  TransformerConfig c;
  c.vocab_size = 32;
  c.embed_dim = 16;
  c.num_heads = 2;
  c.num_layers = 1;
  c.max_seq_len = 24;
  c.ffn_hidden_dim = 32;
  c.ffn_variant = variant;
  return c;
}

CheckResult identity_init(std::uint64_t seed) {
  auto target = TargetLM::initialize(tiny_config(FfnVariant::plain), seed);
  target.set_trainable(false);
  const auto g = init_generator(target, 2, 5, seed + 1);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<TokenId> token(0, 31);
  std::uniform_int_distribution<int> len(1, 10);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<TokenId> p(static_cast<std::size_t>(len(rng)));
    for (auto& t : p) t = token(rng);
    const auto prompt = generate_soft_prompt(g, p);
    const auto expected = embed(target, map_prefix(p, 5));
    const auto a = prompt.data();
    const auto b = expected.data();
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i] != b[i]) return {"identity_init", false, "prompt differs from E(m(p))"};
    }
  }
  return {"identity_init", true, "20 prefixes, exact"};
}

CheckResult gated_identity(std::uint64_t seed) {
  const auto config = tiny_config(FfnVariant::gated);
  std::mt19937_64 rng(seed);
  auto block = Block::initialize(config, rng, 0.3, 0.3);
  block.make_identity();
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::vector<float> data(6 * 16);
  for (auto& v : data) v = normal(rng);
  const auto x = Tensor::from_data({6, 16}, data);
  const auto y = block_forward(block, config, x, 2, true);
  const bool same = std::memcmp(x.data().data(), y.data().data(), x.data().size_bytes()) == 0;
  return {"gated_identity_block", same, same ? "exact" : "output differs from input"};
}

CheckResult gradient_liveness(std::uint64_t seed) {
  auto target = TargetLM::initialize(tiny_config(FfnVariant::plain), seed);
  target.set_trainable(false);
  auto g = init_generator(target, 1, 3, seed + 7);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<TokenId> token(0, 31);
  std::vector<SequenceSplit> batch(3);
  for (auto& s : batch) {
    s.prefix.resize(4);
    s.suffix.resize(3);
    for (auto& t : s.prefix) t = token(rng);
    for (auto& t : s.suffix) t = token(rng);
  }
  Tape tape;
  {
    TapeScope<float> scope(tape);
    auto loss = aligned_clm_loss(target, build_training_input(ExtractionMethod::dynamic(g), target, batch));
    tape.backward(loss);
  }
  const auto max_abs = [](const Tensor& t) {
    float m = 0;
    if (t.has_grad()) {
      for (float v : t.grad()) m = std::max(m, std::abs(v));
    }
    return m;
  };
  const float wo = max_abs(g.blocks[0].w_out);
  const float wd = max_abs(g.blocks[0].w_ffn_down);
  return {"zero_init_gradients_live", wo > 0 && wd > 0,
          "max|grad W_O| " + std::to_string(wo) + ", max|grad W_down| " + std::to_string(wd)};
}

CheckResult masked_locality(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 2.0f);
  std::vector<float> data(6 * 7);
  for (auto& v : data) v = normal(rng);
  const std::vector<TokenId> targets{1, 2, 3, 4, 5, 6};
  const std::vector<std::uint8_t> mask{0, 1, 1, 0, 1, 0};
  const float base = masked_cross_entropy(Tensor::from_data({6, 7}, data), targets, mask).item();
  for (int row : {0, 3, 5}) {
    for (int j = 0; j < 7; ++j) data[row * 7 + j] += 100.0f * normal(rng);
  }
  auto changed_targets = targets;
  changed_targets[0] = 0;
  changed_targets[5] = 0;
  const float moved = masked_cross_entropy(Tensor::from_data({6, 7}, data), changed_targets, mask).item();
  const bool same = std::memcmp(&base, &moved, sizeof base) == 0;
  return {"masked_loss_locality", same, same ? "bit-identical" : "loss changed"};
}

CheckResult checkpoint_round_trip(std::uint64_t seed) {
  const auto lm = TargetLM::initialize(tiny_config(FfnVariant::gated), seed);
  const auto named = lm.named_parameters();
  const auto bytes = encode_dspx({{"kind", "probe"}}, named);
  const auto decoded = decode_dspx(bytes);
  bool ok = decoded.tensors.size() == named.size();
  for (std::size_t i = 0; ok && i < named.size(); ++i) {
    ok = decoded.tensors[i].name == named[i].name &&
         bitwise_equal(decoded.tensors[i].tensor, named[i].tensor);
  }
  return {"checkpoint_round_trip", ok, ok ? "bit-exact" : "mismatch"};
}

}  // namespace

std::vector<CheckResult> run_invariant_suite(std::uint64_t seed) {
  std::vector<CheckResult> out;
  const std::vector<std::function<CheckResult(std::uint64_t)>> checks{
      gradient_check,    identity_init,   gated_identity,
      gradient_liveness, masked_locality, checkpoint_round_trip};
  for (const auto& check : checks) {
    try {
      out.push_back(check(seed));
    } catch (const std::exception& e) {
      out.push_back({"exception", false, e.what()});
    }
  }
  return out;
}

}  // namespace memprobe
