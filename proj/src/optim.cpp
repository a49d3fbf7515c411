// SPDX-License-Identifier: Apache-2.0
#include "nlr/optim.hpp"

#include <cmath>

#include "nlr/error.hpp"

namespace nlr {

template <typename T>
void OptimizerState<T>::init(const ParameterList<T>& params) {
  velocity.clear();
  for (const auto& p : params) velocity.push_back(Tensor<T>::zeros(p.tensor.shape()));
}

template <typename T>
void sgd_step(const ParameterList<T>& params, OptimizerState<T>& state) {
  if (state.velocity.size() != params.size())
    throw ShapeError("sgd_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(state.velocity.size()) + " velocity buffers");
  if (!(state.lr >= 0.0)) throw std::invalid_argument("sgd_step: lr must be >= 0");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i].tensor;
    if (state.velocity[i].shape() != p.shape())
      throw ShapeError("sgd_step: velocity shape mismatch for " + params[i].name);
    if (!p.has_grad()) continue;
    for (T g : p.grad())
      if (!std::isfinite(g)) throw DivergenceError("sgd_step: non-finite gradient in " + params[i].name);
  }

  const T mu = static_cast<T>(state.momentum);
  const T wd = static_cast<T>(state.weight_decay);
  const T lr = static_cast<T>(state.lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].tensor;
    auto w = p.mutable_values();
    auto v = state.velocity[i].mutable_values();
    const bool has_grad = p.has_grad();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const T g = has_grad ? p.grad()[j] : T(0);
      if (state.decoupled_weight_decay) {
        v[j] = mu * v[j] + g;
        w[j] = w[j] - lr * v[j] - lr * wd * w[j];
      } else {
        v[j] = mu * v[j] + g + wd * w[j];
        w[j] = w[j] - lr * v[j];
      }
    }
  }
}

double lr_at(double base_lr, std::size_t epoch, std::size_t total_epochs,
             const std::vector<double>& milestones, double step_ratio) {
  double lr = base_lr;
  for (double m : milestones)
    if (static_cast<double>(epoch) >= m * static_cast<double>(total_epochs)) lr *= step_ratio;
  return lr;
}

template struct OptimizerState<float>;
template struct OptimizerState<double>;
template void sgd_step(const ParameterList<float>&, OptimizerState<float>&);
template void sgd_step(const ParameterList<double>&, OptimizerState<double>&);

}  // namespace nlr
