// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#include "psnas/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "psnas/error.hpp"

namespace psnas::ad {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive: " + shape_str(shape));
  }
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<detail::Storage<T>>()) {
  check_shape(shape);
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<detail::Storage<T>>()) {
  check_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

template <typename T>
Tensor<T> Tensor<T>::parameter(Shape shape, std::vector<T> values) {
  Tensor t(std::move(shape), std::move(values));
  t.impl_->requires_grad = true;
  return t;
}

template <typename T>
void Tensor<T>::zero_grad() {
  impl_->grad.assign(impl_->data.size(), T(0));
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(impl_->shape, impl_->data);
}

template <typename T>
bool Tape<T>::tracks(std::initializer_list<const Tensor<T>*> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<T>* t) { return t && t->defined() && t->requires_grad(); });
}

template <typename T>
bool Tape<T>::tracks(std::span<const Tensor<T>> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<T>& t) { return t.defined() && t.requires_grad(); });
}

template <typename T>
void Tape<T>::record(std::vector<StoragePtr> inputs, Tensor<T>& output, BackwardFn backward) {
  if (consumed_) throw Error("computation record reused after backward() without clear()");
  output.storage()->requires_grad = true;
  output.storage()->node = static_cast<std::int64_t>(entries_.size());
  entries_.push_back(Entry{std::move(inputs), output.storage(), std::move(backward)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (consumed_) throw Error("backward() called twice on the same computation record");
  if (loss.numel() != 1) throw ShapeError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
  if (loss.node_id() < 0 || static_cast<std::size_t>(loss.node_id()) >= entries_.size() ||
      entries_[loss.node_id()].output != loss.storage()) {
    throw Error("loss was not produced under this computation record");
  }
  consumed_ = true;
  loss.storage()->grad_buffer()[0] += T(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward(it->output->grad);
  }
  // Every tracked leaf reachable from the record ends up with a gradient.
  for (auto& e : entries_) {
    for (auto& in : e.inputs) {
      if (in && in->requires_grad && in->node < 0) in->grad_buffer();
    }
  }
}

template <typename T>
void Tape<T>::clear() {
  for (auto& e : entries_) e.output->node = -1;
  entries_.clear();
  consumed_ = false;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace psnas::ad
