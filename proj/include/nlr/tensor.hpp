// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "nlr/error.hpp"

namespace nlr {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
struct TensorData {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty means "no gradient recorded"
  bool requires_grad = false;
};

/// Shared handle to a dense row-major array plus its accumulated gradient.
/// Copies of a Tensor alias the same storage.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = numel(shape);
    return from_values(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor from_values(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (numel(shape) != values.size())
      throw ShapeError("tensor: shape " + to_string(shape) + " holds " +
                       std::to_string(numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    auto d = std::make_shared<TensorData<T>>();
    d->shape = std::move(shape);
    d->values = std::move(values);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
  }

  static Tensor scalar(T v) { return from_values({1}, {v}); }

  explicit Tensor(std::shared_ptr<TensorData<T>> d) : d_(std::move(d)) {}

  bool defined() const noexcept { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t dim(std::size_t i) const { return d_->shape.at(i); }
  std::size_t size() const { return d_->values.size(); }

  std::span<const T> values() const { return d_->values; }
  std::span<T> mutable_values() { return d_->values; }
  T item() const {
    if (size() != 1) throw ShapeError("item: tensor " + to_string(shape()) + " is not a scalar");
    return d_->values[0];
  }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool r) { d_->requires_grad = r; }

  bool has_grad() const { return !d_->grad.empty(); }
  std::span<const T> grad() const { return d_->grad; }
  std::span<T> mutable_grad() {
    if (d_->grad.empty()) d_->grad.assign(size(), T(0));
    return d_->grad;
  }
  void zero_grad() {
    if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), T(0));
  }
  void clear_grad() { d_->grad.clear(); }

  /// Deep copy with no gradient and requires_grad off.
  Tensor clone() const { return from_values(shape(), d_->values); }

  TensorData<T>* data() const noexcept { return d_.get(); }
  const std::shared_ptr<TensorData<T>>& storage() const noexcept { return d_; }

 private:
  std::shared_ptr<TensorData<T>> d_;
};

}  // namespace nlr
