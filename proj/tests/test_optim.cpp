// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <limits>

#include "nlr/error.hpp"
#include "nlr/optim.hpp"

using namespace nlr;

namespace {

ParameterList<double> one_param(std::vector<double> values, std::vector<double> grad) {
  const std::size_t n = values.size();
  auto t = Tensor<double>::from_values({n}, std::move(values), true);
  auto g = t.mutable_grad();
  std::copy(grad.begin(), grad.end(), g.begin());
  return {{"w", t}};
}

}  // namespace

TEST_CASE("zero learning rate keeps parameters but updates velocity") {
  auto p = one_param({1.0, -2.0}, {0.5, 0.25});
  OptimizerState<double> s;
  s.lr = 0.0;
  s.init(p);
  sgd_step(p, s);
  CHECK(p[0].tensor.values()[0] == 1.0);
  CHECK(p[0].tensor.values()[1] == -2.0);
  CHECK(s.velocity[0].values()[0] == doctest::Approx(0.5 + 1e-4 * 1.0));
}

TEST_CASE("plain SGD moves by lr times gradient") {
  auto p = one_param({1.0, -2.0}, {0.5, 0.25});
  OptimizerState<double> s;
  s.lr = 0.1;
  s.momentum = 0.0;
  s.weight_decay = 0.0;
  s.init(p);
  sgd_step(p, s);
  CHECK(p[0].tensor.values()[0] == 1.0 - 0.1 * 0.5);
  CHECK(p[0].tensor.values()[1] == -2.0 - 0.1 * 0.25);
}

TEST_CASE("momentum on a quadratic follows the hand recurrence") {
  // f(w) = w^2, w0 = 1, lr 0.1, momentum 0.9:
  //   g = 2,   v = 2,            w = 0.8
  //   g = 1.6, v = 0.9*2 + 1.6,  w = 0.8 - 0.34 = 0.46
  auto p = one_param({1.0}, {0.0});
  OptimizerState<double> s;
  s.lr = 0.1;
  s.momentum = 0.9;
  s.weight_decay = 0.0;
  s.init(p);
  std::vector<double> w;
  for (int i = 0; i < 2; ++i) {
    auto t = p[0].tensor;
    t.mutable_grad()[0] = 2.0 * t.values()[0];
    sgd_step(p, s);
    w.push_back(t.values()[0]);
  }
  CHECK(w[0] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(w[1] == doctest::Approx(0.46).epsilon(1e-15));
}

TEST_CASE("decoupled weight decay") {
  auto p = one_param({2.0}, {0.0});
  OptimizerState<double> s;
  s.lr = 0.1;
  s.momentum = 0.0;
  s.weight_decay = 0.5;
  s.decoupled_weight_decay = true;
  s.init(p);
  sgd_step(p, s);
  CHECK(p[0].tensor.values()[0] == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));
  CHECK(s.velocity[0].values()[0] == 0.0);
}

TEST_CASE("non-finite gradients abort before any update") {
  auto a = Tensor<double>::from_values({1}, {1.0}, true);
  auto b = Tensor<double>::from_values({1}, {1.0}, true);
  a.mutable_grad()[0] = 1.0;
  b.mutable_grad()[0] = std::numeric_limits<double>::quiet_NaN();
  ParameterList<double> p{{"a", a}, {"b", b}};
  OptimizerState<double> s;
  s.init(p);
  CHECK_THROWS_AS(sgd_step(p, s), DivergenceError);
  CHECK(a.values()[0] == 1.0);
  CHECK(s.velocity[0].values()[0] == 0.0);
}

TEST_CASE("missing gradient counts as zero") {
  auto a = Tensor<double>::from_values({1}, {1.0}, true);
  ParameterList<double> p{{"a", a}};
  OptimizerState<double> s;
  s.weight_decay = 0.0;
  s.init(p);
  sgd_step(p, s);
  CHECK(a.values()[0] == 1.0);
}

TEST_CASE("step learning-rate schedule") {
  CHECK(lr_at(0.1, 0, 300) == doctest::Approx(0.1));
  CHECK(lr_at(0.1, 149, 300) == doctest::Approx(0.1));
  CHECK(lr_at(0.1, 150, 300) == doctest::Approx(0.01));
  CHECK(lr_at(0.1, 225, 300) == doctest::Approx(0.001));
  CHECK(lr_at(0.1, 10, 20) == doctest::Approx(0.01));
  double prev = 1.0;
  for (std::size_t e = 0; e < 60; ++e) {
    const double lr = lr_at(0.1, e, 60);
    CHECK(lr <= prev);
    prev = lr;
  }
}
