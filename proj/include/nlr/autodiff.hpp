// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <string_view>
#include <vector>

#include "nlr/tensor.hpp"

namespace nlr::ad {

/// Ordered record of executed operations. Forward ops append to it; backward()
/// walks it in reverse. One tape per training step, single writer.
template <typename T>
class Tape {
 public:
  struct Record {
    std::string_view op;
    std::vector<std::shared_ptr<TensorData<T>>> inputs;
    std::shared_ptr<TensorData<T>> output;
    std::function<void()> backward;
  };

  void record(std::string_view op, std::vector<std::shared_ptr<TensorData<T>>> inputs,
              std::shared_ptr<TensorData<T>> output, std::function<void()> backward) {
    records_.push_back({op, std::move(inputs), std::move(output), std::move(backward)});
  }

  /// Populates .grad of every requires_grad tensor reachable from `loss`.
  /// Leaf gradients accumulate across calls; intermediate gradients are reset.
  void backward(const Tensor<T>& loss);

  void clear() { records_.clear(); }

  /// When off, ops produce constant results and nothing is recorded.
  bool recording() const noexcept { return recording_; }
  void set_recording(bool on) noexcept { recording_ = on; }
  std::size_t size() const noexcept { return records_.size(); }
  const std::vector<Record>& records() const noexcept { return records_; }

 private:
  std::vector<Record> records_;
  bool recording_ = true;
};

// Elementwise / dense algebra. Shapes must match exactly unless noted.
template <typename T> Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T factor);
template <typename T> Tensor<T> add_scalar(Tape<T>& tape, const Tensor<T>& a, T c);
/// x[m,n] + bias[n], bias broadcast over rows.
template <typename T> Tensor<T> add_row(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& bias);
template <typename T> Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& x);
template <typename T> Tensor<T> exp(Tape<T>& tape, const Tensor<T>& x);
/// Throws DomainError on any non-positive entry.
template <typename T> Tensor<T> log(Tape<T>& tape, const Tensor<T>& x);
/// log(clamp(x, lo, hi)); gradient is zero where the clamp is active.
template <typename T>
Tensor<T> clamped_log(Tape<T>& tape, const Tensor<T>& x, T lo = T(1e-12), T hi = T(1));
template <typename T> Tensor<T> square(Tape<T>& tape, const Tensor<T>& x);

/// Row-wise over the last axis of a 2-d tensor.
template <typename T> Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& x);
template <typename T> Tensor<T> log_softmax(Tape<T>& tape, const Tensor<T>& x);

template <typename T> Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x);
template <typename T> Tensor<T> mean(Tape<T>& tape, const Tensor<T>& x);
/// [m,n] -> [n], averaging over rows.
template <typename T> Tensor<T> mean_rows(Tape<T>& tape, const Tensor<T>& x);

template <typename T> Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape shape);
/// Copy that does not propagate gradient.
template <typename T> Tensor<T> detach(const Tensor<T>& x);

struct Conv2dAttrs {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// x[B,Ci,H,W] * w[Co,Ci,k,k] + bias[Co].
template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 Conv2dAttrs attrs = {});
/// Adjoint of conv2d: x[B,Ci,H,W], w[Ci,Co,k,k] -> [B,Co,(H-1)s-2p+k,(W-1)s-2p+k].
template <typename T>
Tensor<T> conv_transpose2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w,
                           const Tensor<T>& bias, Conv2dAttrs attrs = {});
/// Non-overlapping k×k windows; H and W must be divisible by k.
template <typename T> Tensor<T> max_pool2d(Tape<T>& tape, const Tensor<T>& x, std::size_t k);
template <typename T> Tensor<T> avg_pool2d(Tape<T>& tape, const Tensor<T>& x, std::size_t k);

}  // namespace nlr::ad
