// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "memprobe/tensor.hpp"

namespace memprobe {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment buffers for an ordered parameter list.
template <typename Scalar>
struct BasicAdamState {
  AdamConfig config;
  std::vector<std::vector<Scalar>> first_moment;
  std::vector<std::vector<Scalar>> second_moment;
  std::vector<Shape> shapes;
  std::int64_t step = 0;

  static BasicAdamState for_parameters(std::span<const BasicTensor<Scalar>> params,
                                       AdamConfig config = {});
};

using AdamState = BasicAdamState<float>;

/// One bias-corrected Adam update using each parameter's accumulated gradient.
/// A parameter without a gradient buffer is treated as having zero gradient.
template <typename Scalar>
void adam_step(std::span<BasicTensor<Scalar>> params, BasicAdamState<Scalar>& state);

/// Rescales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename Scalar>
double clip_grad_norm(std::span<BasicTensor<Scalar>> params, double max_norm);

template <typename Scalar>
void zero_grads(std::span<BasicTensor<Scalar>> params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace memprobe
