// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "memprobe/adam.hpp"

#include <cmath>

#include "memprobe/error.hpp"

namespace memprobe {

template <typename Scalar>
BasicAdamState<Scalar> BasicAdamState<Scalar>::for_parameters(
    std::span<const BasicTensor<Scalar>> params, AdamConfig config) {
  BasicAdamState state;
  state.config = config;
  for (const auto& p : params) {
    state.first_moment.emplace_back(static_cast<std::size_t>(p.numel()), Scalar(0));
    state.second_moment.emplace_back(static_cast<std::size_t>(p.numel()), Scalar(0));
    state.shapes.push_back(p.shape());
  }
  return state;
}

template <typename Scalar>
void adam_step(std::span<BasicTensor<Scalar>> params, BasicAdamState<Scalar>& state) {
  if (params.size() != state.shapes.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters but state for " +
                         std::to_string(state.shapes.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != state.shapes[i]) {
      throw DimensionError("adam_step: parameter " + std::to_string(i) + " has shape " +
                           shape_str(params[i].shape()) + " but moments have " +
                           shape_str(state.shapes[i]));
    }
  }
  state.step += 1;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  const auto b1 = static_cast<Scalar>(c.beta1);
  const auto b2 = static_cast<Scalar>(c.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.has_grad()) {
      // Moments still decay toward zero as if the gradient were zero.
      for (auto& m : state.first_moment[i]) m *= b1;
      for (auto& v : state.second_moment[i]) v *= b2;
      continue;
    }
    auto data = p.data();
    auto grad = p.grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const Scalar g = grad[j];
      m[j] = b1 * m[j] + (Scalar(1) - b1) * g;
      v[j] = b2 * v[j] + (Scalar(1) - b2) * g * g;
      const double mhat = static_cast<double>(m[j]) / bc1;
      const double vhat = static_cast<double>(v[j]) / bc2;
      data[j] -= static_cast<Scalar>(c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon));
    }
  }
}

template <typename Scalar>
double clip_grad_norm(std::span<BasicTensor<Scalar>> params, double max_norm) {
  double sq = 0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (Scalar g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const auto factor = static_cast<Scalar>(max_norm / norm);
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (Scalar& g : p.grad()) g *= factor;
    }
  }
  return norm;
}

template struct BasicAdamState<float>;
template struct BasicAdamState<double>;
template void adam_step<float>(std::span<BasicTensor<float>>, BasicAdamState<float>&);
template void adam_step<double>(std::span<BasicTensor<double>>, BasicAdamState<double>&);
template double clip_grad_norm<float>(std::span<BasicTensor<float>>, double);
template double clip_grad_norm<double>(std::span<BasicTensor<double>>, double);

}  // namespace memprobe
