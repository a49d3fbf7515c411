// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "nlr/models.hpp"

namespace nlr {

template <typename T>
struct OptimizerState {
  std::vector<Tensor<T>> velocity;  // one per parameter, same shape
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double lr = 0.1;
  bool decoupled_weight_decay = false;

  /// Zero velocities shaped like `params`.
  void init(const ParameterList<T>& params);
};

/// Momentum SGD on the gradients stored in the parameter tensors (a missing
/// gradient counts as zero).
///   coupled:   v <- m v + g + wd p;  p <- p - lr v
///   decoupled: v <- m v + g;         p <- p - lr v - lr wd p
/// Throws DivergenceError before touching anything if a gradient is not
/// finite.
template <typename T>
void sgd_step(const ParameterList<T>& params, OptimizerState<T>& state);

/// base_lr * step_ratio^(number of milestones m with epoch >= m * total_epochs).
double lr_at(double base_lr, std::size_t epoch, std::size_t total_epochs,
             const std::vector<double>& milestones = {0.5, 0.75}, double step_ratio = 0.1);

}  // namespace nlr
