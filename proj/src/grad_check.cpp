// SPDX-License-Identifier: Apache-2.0
#include "nlr/grad_check.hpp"

#include <cmath>
#include <limits>

namespace nlr::ad {

namespace {

double relative_error(double analytic, double numeric) {
  if (!std::isfinite(analytic) || !std::isfinite(numeric))
    return std::numeric_limits<double>::infinity();
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

}  // namespace

double grad_check(const ScalarFn& f, const Tensor<double>& point, double step) {
  auto x = Tensor<double>::from_values(point.shape(),
                                       {point.values().begin(), point.values().end()}, true);
  Tape<double> tape;
  auto loss = f(tape, x);
  tape.backward(loss);
  if (!x.has_grad()) x.mutable_grad();  // f independent of x: gradient is zero

  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto eval = [&](double delta) {
      auto probe = point.clone();
      probe.mutable_values()[i] += delta;
      Tape<double> scratch;
      return f(scratch, probe).item();
    };
    const double numeric = (eval(step) - eval(-step)) / (2.0 * step);
    worst = std::max(worst, relative_error(x.grad()[i], numeric));
  }
  return worst;
}

double grad_check_params(const std::function<Tensor<double>(Tape<double>&)>& f,
                         std::vector<Tensor<double>> params, double step) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.clear_grad();
  }
  Tape<double> tape;
  tape.backward(f(tape));

  double worst = 0.0;
  for (auto& p : params) {
    if (!p.has_grad()) p.mutable_grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p.values()[i];
      auto eval = [&](double delta) {
        p.mutable_values()[i] = saved + delta;
        Tape<double> scratch;
        return f(scratch).item();
      };
      const double numeric = (eval(step) - eval(-step)) / (2.0 * step);
      p.mutable_values()[i] = saved;
      worst = std::max(worst, relative_error(p.grad()[i], numeric));
    }
  }
  return worst;
}

}  // namespace nlr::ad
