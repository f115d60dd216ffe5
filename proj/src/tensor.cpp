// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "memprobe/tensor.hpp"

#include <cstring>

#include "memprobe/error.hpp"

namespace memprobe {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename Scalar>
BasicTensor<Scalar> BasicTensor<Scalar>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Scalar(0), requires_grad);
}

template <typename Scalar>
BasicTensor<Scalar> BasicTensor<Scalar>::uninitialized(Shape shape, bool requires_grad) {
  auto impl = std::make_shared<Impl>();
  impl->data.resize(static_cast<std::size_t>(shape_numel(shape)));
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return BasicTensor(std::move(impl));
}

template <typename Scalar>
BasicTensor<Scalar> BasicTensor<Scalar>::full(Shape shape, Scalar value, bool requires_grad) {
  auto impl = std::make_shared<Impl>();
  impl->data.assign(static_cast<std::size_t>(shape_numel(shape)), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return BasicTensor(std::move(impl));
}

template <typename Scalar>
BasicTensor<Scalar> BasicTensor<Scalar>::from_data(Shape shape, std::vector<Scalar> data,
                                                   bool requires_grad) {
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " elements");
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->data.assign(data.begin(), data.end());
  impl->requires_grad = requires_grad;
  return BasicTensor(std::move(impl));
}

template <typename Scalar>
BasicTensor<Scalar> BasicTensor<Scalar>::scalar(Scalar value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

template <typename Scalar>
std::int64_t BasicTensor<Scalar>::dim(std::int64_t i) const {
  if (i < 0) i += rank();
  if (i < 0 || i >= rank()) {
    throw DimensionError("dimension index " + std::to_string(i) + " out of range for " +
                         shape_str(shape()));
  }
  return impl_->shape[static_cast<std::size_t>(i)];
}

template <typename Scalar>
std::int64_t BasicTensor<Scalar>::rows() const {
  if (impl_->shape.empty()) return 1;
  std::int64_t r = 1;
  for (std::size_t i = 0; i + 1 < impl_->shape.size(); ++i) r *= impl_->shape[i];
  return r;
}

template <typename Scalar>
std::int64_t BasicTensor<Scalar>::cols() const {
  return impl_->shape.empty() ? 1 : impl_->shape.back();
}

template <typename Scalar>
Scalar BasicTensor<Scalar>::item() const {
  if (numel() != 1) {
    throw ContractError("item() needs a single-element tensor, got " + shape_str(shape()));
  }
  return impl_->data[0];
}

template <typename Scalar>
void BasicTensor<Scalar>::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  if (!flag) impl_->grad.clear();
}

template <typename Scalar>
std::span<Scalar> BasicTensor<Scalar>::grad_buffer() {
  if (!impl_->requires_grad) {
    throw ContractError("gradient requested for a tensor with requires_grad=false");
  }
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), Scalar(0));
  return impl_->grad;
}

template <typename Scalar>
std::span<Scalar> BasicTensor<Scalar>::fresh_grad() {
  if (!impl_->requires_grad) {
    throw ContractError("gradient requested for a tensor with requires_grad=false");
  }
  if (!impl_->grad.empty()) throw ContractError("fresh_grad() on a tensor that already has one");
  impl_->grad.resize(impl_->data.size());
  return impl_->grad;
}

template <typename Scalar>
BasicTensor<Scalar> BasicTensor<Scalar>::clone() const {
  auto impl = std::make_shared<Impl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  impl->requires_grad = impl_->requires_grad;
  return BasicTensor(std::move(impl));
}

template <typename Scalar>
void BasicTape<Scalar>::backward(BasicTensor<Scalar>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("null")));
  }
  if (!loss.requires_grad()) {
    rules_.clear();
    return;
  }
  loss.grad_buffer()[0] = Scalar(1);
  for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
  rules_.clear();
}

namespace {
template <typename Scalar>
thread_local BasicTape<Scalar>* tls_tape = nullptr;
}  // namespace

template <typename Scalar>
BasicTape<Scalar>* active_tape() noexcept {
  return tls_tape<Scalar>;
}

template <typename Scalar>
TapeScope<Scalar>::TapeScope(BasicTape<Scalar>& tape) : previous_(tls_tape<Scalar>) {
  tls_tape<Scalar> = &tape;
}

template <typename Scalar>
TapeScope<Scalar>::~TapeScope() {
  tls_tape<Scalar> = previous_;
}

template <typename Scalar>
void backward(BasicTensor<Scalar>& loss) {
  auto* tape = active_tape<Scalar>();
  if (tape == nullptr) throw ContractError("backward() called without an active tape");
  tape->backward(loss);
}

namespace {
constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv1a(std::uint64_t h, const void* bytes, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}
}  // namespace

template <typename Scalar>
std::uint64_t checksum(const BasicTensor<Scalar>& tensor) {
  std::uint64_t h = kFnvOffset;
  for (auto d : tensor.shape()) h = fnv1a(h, &d, sizeof d);
  auto data = tensor.data();
  return fnv1a(h, data.data(), data.size_bytes());
}

template <typename Scalar>
bool bitwise_equal(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (a.shape() != b.shape()) return false;
  auto x = a.data();
  auto y = b.data();
  return std::memcmp(x.data(), y.data(), x.size_bytes()) == 0;
}

template <typename Scalar>
std::uint64_t checksum(std::span<const BasicNamedTensor<Scalar>> tensors) {
  std::uint64_t h = kFnvOffset;
  for (const auto& t : tensors) {
    h = fnv1a(h, t.name.data(), t.name.size());
    const std::uint64_t c = checksum(t.tensor);
    h = fnv1a(h, &c, sizeof c);
  }
  return h;
}

#define MEMPROBE_INSTANTIATE(S)                                                       \
  template class BasicTensor<S>;                                                      \
  template class BasicTape<S>;                                                        \
  template class TapeScope<S>;                                                        \
  template BasicTape<S>* active_tape<S>() noexcept;                                   \
  template void backward<S>(BasicTensor<S>&);                                         \
  template std::uint64_t checksum<S>(const BasicTensor<S>&);                          \
  template bool bitwise_equal<S>(const BasicTensor<S>&, const BasicTensor<S>&);       \
  template std::uint64_t checksum<S>(std::span<const BasicNamedTensor<S>>);

MEMPROBE_INSTANTIATE(float)
MEMPROBE_INSTANTIATE(double)

#undef MEMPROBE_INSTANTIATE

}  // namespace memprobe
