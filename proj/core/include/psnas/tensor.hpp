// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PSNAS_TENSOR_HPP_
#define PSNAS_TENSOR_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace psnas::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

template <typename T>
struct Storage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until populated
  bool requires_grad = false;
  std::int64_t node = -1;  // producing record entry, -1 for leaves

  // Returns the gradient buffer, zero-filling it on first use.
  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Dense row-major tensor with optional gradient tracking.
///
/// Copies share storage (handle semantics); use clone() for a deep copy.
/// A tensor with requires_grad() set is a tracked leaf when it was not
/// produced by a recorded operation, which is how weights and
/// architecture parameters are represented.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  /// A leaf that tracks gradients.
  static Tensor parameter(Shape shape, std::vector<T> values);

  bool defined() const noexcept { return static_cast<bool>(impl_); }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  T& operator[](std::size_t i) { return impl_->data[i]; }
  const T& operator[](std::size_t i) const { return impl_->data[i]; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<T> grad() { return impl_->grad; }
  std::span<const T> grad() const { return impl_->grad; }
  void zero_grad();
  void clear_grad() { impl_->grad.clear(); }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);

  /// Value of a single-element tensor.
  T item() const;

  /// Deep copy of values; untracked and without gradient.
  Tensor clone() const;

  std::int64_t node_id() const { return impl_->node; }

  const std::shared_ptr<detail::Storage<T>>& storage() const { return impl_; }

 private:
  std::shared_ptr<detail::Storage<T>> impl_;
};

/// Ordered record of the operations applied while tracking is on.
///
/// Operations append one entry each; backward() replays the entries in
/// exact reverse order. A record is consumed by backward() and must be
/// cleared before it is reused.
template <typename T>
class Tape {
 public:
  using StoragePtr = std::shared_ptr<detail::Storage<T>>;
  using BackwardFn = std::function<void(std::span<const T> out_grad)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }

  /// True if an op over these inputs must be recorded.
  bool tracks(std::initializer_list<const Tensor<T>*> inputs) const;
  bool tracks(std::span<const Tensor<T>> inputs) const;

  void record(std::vector<StoragePtr> inputs, Tensor<T>& output, BackwardFn backward);

  /// Reverse accumulation from a scalar loss.
  void backward(const Tensor<T>& loss);

  void clear();
  std::size_t size() const noexcept { return entries_.size(); }

 private:
  struct Entry {
    std::vector<StoragePtr> inputs;
    StoragePtr output;
    BackwardFn backward;
  };

  bool recording_;
  bool consumed_ = false;
  std::vector<Entry> entries_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace psnas::ad

#endif  // PSNAS_TENSOR_HPP_
