// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <functional>
#include <string>

#include "nlr/autodiff.hpp"
#include "nlr/grad_check.hpp"
#include "nlr/models.hpp"
#include "support.hpp"

using namespace nlr;
using ad::Tape;
using test::random_tensor;

namespace {

constexpr double kStep = 1e-5;
constexpr double kTol = 1e-4;
constexpr int kTrials = 20;

using UnaryOp = std::function<Tensor<double>(Tape<double>&, const Tensor<double>&)>;

// Reduces op(x) against a fixed random weighting so every output entry
// contributes a distinct amount to the scalar.
double check_op(const UnaryOp& op, const Shape& in_shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  auto x = random_tensor(in_shape, rng, lo, hi);
  Tape<double> probe;
  const Shape out_shape = op(probe, x).shape();
  const auto w = random_tensor(out_shape, rng);
  return ad::grad_check(
      [&](Tape<double>& t, const Tensor<double>& v) { return ad::sum(t, ad::mul(t, op(t, v), w)); }, x, kStep);
}

void check_all_trials(const std::string& name, const UnaryOp& op, const Shape& shape, double lo = -1.0,
                      double hi = 1.0) {
  Rng rng(derive_seed({0xAD, std::hash<std::string>{}(name)}));
  double worst = 0;
  for (int i = 0; i < kTrials; ++i) worst = std::max(worst, check_op(op, shape, rng, lo, hi));
  INFO(name << " worst relative error " << worst);
  CHECK(worst <= kTol);
}

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
  Tape<double> t;
  const auto p = ad::softmax(t, Tensor<double>::from_values({1, 2}, {0.0, 0.0}));
  CHECK(p.values()[0] == doctest::Approx(0.5));
  CHECK(p.values()[1] == doctest::Approx(0.5));
}

TEST_CASE("relu clips negatives") {
  Tape<double> t;
  const auto r = ad::relu(t, Tensor<double>::from_values({2}, {-1.0, 2.0}));
  CHECK(r.values()[0] == 0.0);
  CHECK(r.values()[1] == 2.0);
}

TEST_CASE("identity matmul returns the operand") {
  Rng rng(3);
  const auto a = random_tensor({3, 3}, rng);
  auto eye = Tensor<double>::zeros({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.mutable_values()[i * 4] = 1.0;
  Tape<double> t;
  const auto r = ad::matmul(t, eye, a);
  for (std::size_t i = 0; i < 9; ++i) CHECK(r.values()[i] == a.values()[i]);
}

TEST_CASE("softmax rows are distributions") {
  Rng rng(11);
  Tape<double> t;
  const auto p = ad::softmax(t, random_tensor({16, 7}, rng, -20, 20));
  for (std::size_t i = 0; i < 16; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 7; ++j) {
      const double v = p.values()[i * 7 + j];
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) <= 1e-9);
  }
}

TEST_CASE("backward of sum of squares") {
  auto w = Tensor<double>::from_values({2}, {1.0, 2.0}, true);
  Tape<double> t;
  t.backward(ad::sum(t, ad::mul(t, w, w)));
  REQUIRE(w.has_grad());
  CHECK(w.grad()[0] == 2.0);
  CHECK(w.grad()[1] == 4.0);
}

TEST_CASE("detached input receives no gradient") {
  auto w = Tensor<double>::from_values({2}, {1.0, 2.0}, true);
  auto other = Tensor<double>::from_values({2}, {0.5, 0.5}, true);
  Tape<double> t;
  const auto loss = ad::add(t, ad::sum(t, ad::square(t, ad::detach(w))), ad::sum(t, other));
  t.backward(loss);
  const bool zero = !w.has_grad() || (w.grad()[0] == 0.0 && w.grad()[1] == 0.0);
  CHECK(zero);
  REQUIRE(other.has_grad());
  CHECK(other.grad()[0] == 1.0);
}

TEST_CASE("backward rejects a non-scalar loss") {
  auto w = Tensor<double>::from_values({2}, {1.0, 2.0}, true);
  Tape<double> t;
  CHECK_THROWS_AS(t.backward(ad::square(t, w)), ShapeError);
}

TEST_CASE("shape errors name the operator") {
  Tape<double> t;
  const auto a = Tensor<double>::zeros({2, 3});
  const auto b = Tensor<double>::zeros({2, 2});
  try {
    ad::matmul(t, a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
  }
  CHECK_THROWS_AS(ad::add(t, a, b), ShapeError);
}

TEST_CASE("log of a non-positive value is a domain error") {
  Tape<double> t;
  CHECK_THROWS_AS(ad::log(t, Tensor<double>::from_values({2}, {1.0, 0.0})), DomainError);
  const auto c = ad::clamped_log(t, Tensor<double>::from_values({2}, {1.0, 0.0}));
  CHECK(std::isfinite(c.values()[1]));
  CHECK(c.values()[1] == doctest::Approx(std::log(1e-12)));
}

TEST_CASE("grad_check on sum of squares is exact") {
  const auto x = Tensor<double>::from_values({3}, {1.0, 2.0, 3.0});
  const double err =
      ad::grad_check([](Tape<double>& t, const Tensor<double>& v) { return ad::sum(t, ad::square(t, v)); }, x, kStep);
  CHECK(err < 1e-6);
}

TEST_CASE("grad_check reports non-finite values as failure") {
  const auto x = Tensor<double>::from_values({2}, {1.0, 2.0});
  const double err = ad::grad_check(
      [](Tape<double>& t, const Tensor<double>& v) {
        return ad::sum(t, ad::scale(t, v, std::numeric_limits<double>::quiet_NaN()));
      },
      x, kStep);
  CHECK(std::isinf(err));
}

TEST_CASE("operator gradients match finite differences") {
  Rng rng(99);
  const auto other = random_tensor({3, 4}, rng);
  const auto bias = random_tensor({4}, rng);
  const auto right = random_tensor({4, 5}, rng);

  check_all_trials("add", [&](Tape<double>& t, const Tensor<double>& x) { return ad::add(t, x, other); }, {3, 4});
  check_all_trials("sub", [&](Tape<double>& t, const Tensor<double>& x) { return ad::sub(t, other, x); }, {3, 4});
  check_all_trials("mul", [&](Tape<double>& t, const Tensor<double>& x) { return ad::mul(t, x, x); }, {3, 4});
  check_all_trials("scale", [](Tape<double>& t, const Tensor<double>& x) { return ad::scale(t, x, -1.7); }, {3, 4});
  check_all_trials("add_scalar", [](Tape<double>& t, const Tensor<double>& x) { return ad::add_scalar(t, x, 0.3); },
                   {3, 4});
  check_all_trials("add_row", [&](Tape<double>& t, const Tensor<double>& x) { return ad::add_row(t, x, bias); },
                   {3, 4});
  check_all_trials("add_row/bias", [&](Tape<double>& t, const Tensor<double>& b) { return ad::add_row(t, other, b); },
                   {4});
  check_all_trials("matmul/left", [&](Tape<double>& t, const Tensor<double>& x) { return ad::matmul(t, x, right); },
                   {3, 4});
  check_all_trials("matmul/right", [&](Tape<double>& t, const Tensor<double>& x) { return ad::matmul(t, other, x); },
                   {4, 2});
  check_all_trials("relu", [](Tape<double>& t, const Tensor<double>& x) { return ad::relu(t, x); }, {3, 4});
  check_all_trials("sigmoid", [](Tape<double>& t, const Tensor<double>& x) { return ad::sigmoid(t, x); }, {3, 4}, -4,
                   4);
  check_all_trials("exp", [](Tape<double>& t, const Tensor<double>& x) { return ad::exp(t, x); }, {3, 4});
  check_all_trials("log", [](Tape<double>& t, const Tensor<double>& x) { return ad::log(t, x); }, {3, 4}, 0.1, 2.0);
  check_all_trials("clamped_log", [](Tape<double>& t, const Tensor<double>& x) { return ad::clamped_log(t, x); },
                   {3, 4}, 0.05, 0.95);
  check_all_trials("square", [](Tape<double>& t, const Tensor<double>& x) { return ad::square(t, x); }, {3, 4});
  check_all_trials("softmax", [](Tape<double>& t, const Tensor<double>& x) { return ad::softmax(t, x); }, {3, 4}, -3,
                   3);
  check_all_trials("log_softmax", [](Tape<double>& t, const Tensor<double>& x) { return ad::log_softmax(t, x); },
                   {3, 4}, -3, 3);
  check_all_trials("sum", [](Tape<double>& t, const Tensor<double>& x) { return ad::sum(t, x); }, {3, 4});
  check_all_trials("mean", [](Tape<double>& t, const Tensor<double>& x) { return ad::mean(t, x); }, {3, 4});
  check_all_trials("mean_rows", [](Tape<double>& t, const Tensor<double>& x) { return ad::mean_rows(t, x); }, {3, 4});
  check_all_trials("reshape", [](Tape<double>& t, const Tensor<double>& x) { return ad::reshape(t, x, {2, 6}); },
                   {3, 4});

  const auto kernel = random_tensor({3, 2, 3, 3}, rng);
  const auto kbias = random_tensor({3}, rng);
  check_all_trials("conv2d",
                   [&](Tape<double>& t, const Tensor<double>& x) { return ad::conv2d(t, x, kernel, kbias, {1, 1}); },
                   {2, 2, 5, 5});
  check_all_trials("conv2d/stride",
                   [&](Tape<double>& t, const Tensor<double>& x) { return ad::conv2d(t, x, kernel, kbias, {2, 0}); },
                   {1, 2, 6, 6});
  const auto input = random_tensor({2, 2, 5, 5}, rng);
  check_all_trials("conv2d/weight",
                   [&](Tape<double>& t, const Tensor<double>& w) { return ad::conv2d(t, input, w, kbias, {1, 1}); },
                   {3, 2, 3, 3});
  check_all_trials("conv2d/bias",
                   [&](Tape<double>& t, const Tensor<double>& b) { return ad::conv2d(t, input, kernel, b, {1, 1}); },
                   {3});
  const auto tkernel = random_tensor({2, 3, 2, 2}, rng);
  check_all_trials(
      "conv_transpose2d",
      [&](Tape<double>& t, const Tensor<double>& x) { return ad::conv_transpose2d(t, x, tkernel, kbias, {2, 0}); },
      {2, 2, 3, 3});
  check_all_trials(
      "conv_transpose2d/weight",
      [&](Tape<double>& t, const Tensor<double>& w) { return ad::conv_transpose2d(t, input, w, kbias, {1, 1}); },
      {2, 3, 3, 3});
  check_all_trials("max_pool2d", [](Tape<double>& t, const Tensor<double>& x) { return ad::max_pool2d(t, x, 2); },
                   {2, 2, 4, 4});
  check_all_trials("avg_pool2d", [](Tape<double>& t, const Tensor<double>& x) { return ad::avg_pool2d(t, x, 2); },
                   {2, 2, 4, 4});
}

TEST_CASE("three-layer perceptron gradients match finite differences") {
  Rng rng(5);
  Linear<double> l1(6, 8, rng, "l1"), l2(8, 8, rng, "l2"), l3(8, 3, rng, "l3");
  const auto x = random_tensor({4, 6}, rng);
  const auto target = random_tensor({4, 3}, rng);
  auto f = [&](Tape<double>& t) {
    auto h = ad::relu(t, l1.forward(t, x));
    h = ad::relu(t, l2.forward(t, h));
    return ad::mean(t, ad::square(t, ad::sub(t, l3.forward(t, h), target)));
  };
  const double err = ad::grad_check_params(f, {l1.weight, l1.bias, l2.weight, l2.bias, l3.weight, l3.bias}, kStep);
  CHECK(err <= kTol);
}

TEST_CASE("identical tapes give bit-identical values and gradients") {
  auto run = [] {
    Rng rng(21);
    auto w = random_tensor({4, 3}, rng);
    w.set_requires_grad(true);
    const auto x = random_tensor({5, 4}, rng);
    Tape<double> t;
    const auto loss = ad::mean(t, ad::log_softmax(t, ad::matmul(t, x, w)));
    t.backward(loss);
    std::vector<double> out{loss.item()};
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  CHECK(run() == run());
}
