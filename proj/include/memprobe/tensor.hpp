// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors and the reverse-mode gradient tape.
//
// A BasicTensor is a shared handle: copies alias the same buffer, like a
// framework tensor. Operations in ops.hpp allocate fresh outputs and, while a
// tape is active on the calling thread, record a backward closure for every
// output that depends on a tensor with requires_grad set.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

namespace memprobe {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename Scalar>
class BasicTape;

/// Allocator whose value-less construct() default-initializes, so resizing a
/// buffer of floats does not zero it. Storage is 64-byte aligned: vectorized
/// kernels peel loop heads by address, and a fixed alignment keeps their
/// summation order, hence results, a function of shapes alone.
template <typename T>
struct DefaultInitAllocator : std::allocator<T> {
  using std::allocator<T>::allocator;
  static constexpr std::align_val_t kAlignment{64};
  template <typename U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t n) noexcept { ::operator delete(p, n * sizeof(T), kAlignment); }
  template <typename U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

template <typename T>
using Buffer = std::vector<T, DefaultInitAllocator<T>>;

template <typename Scalar>
class BasicTensor {
 public:
  using value_type = Scalar;

  /// Null handle; most accessors require a defined tensor.
  BasicTensor() = default;

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  /// Contents unspecified; for outputs that are fully overwritten.
  static BasicTensor uninitialized(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, Scalar value, bool requires_grad = false);
  static BasicTensor from_data(Shape shape, std::vector<Scalar> data, bool requires_grad = false);
  static BasicTensor scalar(Scalar value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }

  const Shape& shape() const { return impl_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(impl_->shape.size()); }
  std::int64_t dim(std::int64_t i) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }
  /// Product of all dimensions except the last (1 for rank-0 tensors).
  std::int64_t rows() const;
  /// Size of the last dimension (1 for rank-0 tensors).
  std::int64_t cols() const;

  std::span<Scalar> data() { return impl_->data; }
  std::span<const Scalar> data() const { return impl_->data; }
  Scalar item() const;
  Scalar at(std::int64_t row, std::int64_t col) const { return impl_->data[row * cols() + col]; }

  bool requires_grad() const { return impl_->requires_grad; }
  /// Turning requires_grad off also drops any accumulated gradient.
  void set_requires_grad(bool flag);

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<Scalar> grad() { return impl_->grad; }
  std::span<const Scalar> grad() const { return impl_->grad; }
  /// Gradient buffer, allocated (zero-filled) on first use. Requires requires_grad.
  std::span<Scalar> grad_buffer();
  /// Allocates an uninitialized gradient buffer; only valid while has_grad()
  /// is false, and the caller must overwrite every element.
  std::span<Scalar> fresh_grad();
  void zero_grad() { impl_->grad.clear(); }

  /// Deep copy without gradient or tape history.
  BasicTensor clone() const;

  template <typename Other>
  BasicTensor<Other> cast() const {
    std::vector<Other> converted(impl_->data.begin(), impl_->data.end());
    return BasicTensor<Other>::from_data(impl_->shape, std::move(converted), impl_->requires_grad);
  }

  bool same_storage(const BasicTensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    Buffer<Scalar> data;
    Buffer<Scalar> grad;
    bool requires_grad = false;
  };

  explicit BasicTensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<Impl> impl_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Ordered record of backward closures for one forward pass.
template <typename Scalar>
class BasicTape {
 public:
  using Rule = std::function<void()>;

  void record(Rule rule) { rules_.push_back(std::move(rule)); }
  std::size_t size() const noexcept { return rules_.size(); }
  void clear() noexcept { rules_.clear(); }

  /// Seeds d(loss)/d(loss) = 1, replays the recorded rules newest-first and
  /// clears the tape. `loss` must hold exactly one element.
  void backward(BasicTensor<Scalar>& loss);

 private:
  std::vector<Rule> rules_;
};

using Tape = BasicTape<float>;
using Tape64 = BasicTape<double>;

/// Active tape for the calling thread, or nullptr.
template <typename Scalar>
BasicTape<Scalar>* active_tape() noexcept;

/// Installs a tape as the calling thread's active tape for its lifetime.
template <typename Scalar>
class TapeScope {
 public:
  explicit TapeScope(BasicTape<Scalar>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  BasicTape<Scalar>* previous_;
};

/// Backpropagates through the active tape.
template <typename Scalar>
void backward(BasicTensor<Scalar>& loss);

/// FNV-1a over shape and data bytes.
template <typename Scalar>
std::uint64_t checksum(const BasicTensor<Scalar>& tensor);

/// True when shapes match and every element compares equal bit-for-bit.
template <typename Scalar>
bool bitwise_equal(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b);

template <typename Scalar>
struct BasicNamedTensor {
  std::string name;
  BasicTensor<Scalar> tensor;
};

using NamedTensor = BasicNamedTensor<float>;

/// Order-sensitive checksum over a parameter list.
template <typename Scalar>
std::uint64_t checksum(std::span<const BasicNamedTensor<Scalar>> tensors);

}  // namespace memprobe
