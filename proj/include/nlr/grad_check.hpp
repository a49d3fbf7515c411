// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "nlr/autodiff.hpp"

namespace nlr::ad {

using ScalarFn = std::function<Tensor<double>(Tape<double>&, const Tensor<double>&)>;

/// Compares the tape gradient of `f` at `point` against central finite
/// differences with the given step. Returns
///   max_i |analytic_i - numeric_i| / max(1, |numeric_i|)
/// or +inf if either side produced a non-finite value.
double grad_check(const ScalarFn& f, const Tensor<double>& point, double step);

/// Same check, but over the entries of existing parameter tensors that `f`
/// closes over. Parameters are perturbed in place and restored afterwards.
double grad_check_params(const std::function<Tensor<double>(Tape<double>&)>& f,
                         std::vector<Tensor<double>> params, double step);

}  // namespace nlr::ad
