// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "nlr/grad_check.hpp"
#include "nlr/losses.hpp"
#include "nlr/models.hpp"
#include "support.hpp"

using namespace nlr;
using ad::Tape;

namespace {

ModelSpec mlp_spec(Shape input = {1, 6, 6}) {
  ModelSpec s;
  s.backbone = BackboneKind::mlp;
  s.input_shape = std::move(input);
  s.hidden = {16, 12};
  s.feature_dim = 32;
  s.num_classes = 4;
  s.num_clusters = 5;
  return s;
}

ModelSpec conv_spec() {
  auto s = mlp_spec({1, 8, 8});
  s.backbone = BackboneKind::conv;
  s.channels = {3, 4, 4};
  return s;
}

Tensor<double> random_inputs(std::size_t batch, const Shape& sample, Rng& rng) {
  return test::random_tensor(batch_shape(batch, sample), rng, 0.0, 1.0);
}

void zero(const Tensor<double>& t) {
  auto copy = t;
  for (auto& v : copy.mutable_values()) v = 0.0;
}

}  // namespace

TEST_CASE("encode, classify, cluster_assign and decode shapes") {
  for (const auto& spec : {mlp_spec(), conv_spec()}) {
    ModelSet<double> m(spec, 3);
    Rng rng(1);
    const auto x = random_inputs(8, spec.input_shape, rng);
    Tape<double> t;
    const auto f = m.backbone.encode(t, x);
    CHECK(f.shape() == Shape{8, 32});
    CHECK(m.classifier.probabilities(t, f).shape() == Shape{8, 4});
    CHECK(m.cluster.probabilities(t, f).shape() == Shape{8, 5});
    CHECK(m.decoder.decode(t, f).shape() == x.shape());
  }
}

TEST_CASE("shape mismatches are rejected") {
  ModelSet<double> m(mlp_spec(), 3);
  Rng rng(1);
  Tape<double> t;
  CHECK_THROWS_AS(m.backbone.encode(t, random_inputs(2, {1, 5, 5}, rng)), ShapeError);
  CHECK_THROWS_AS(m.classifier.probabilities(t, test::random_tensor({2, 31}, rng)), ShapeError);
  CHECK_THROWS_AS(m.decoder.decode(t, test::random_tensor({2, 7}, rng)), ShapeError);
}

TEST_CASE("zero final layer gives zero features") {
  ModelSet<double> m(mlp_spec(), 3);
  zero(m.backbone.final_layer().weight);
  zero(m.backbone.final_layer().bias);
  Rng rng(2);
  Tape<double> t;
  const auto f = m.backbone.encode(t, random_inputs(4, {1, 6, 6}, rng));
  for (double v : f.values()) CHECK(v == 0.0);
}

TEST_CASE("zero heads give uniform rows") {
  ModelSet<double> m(mlp_spec(), 3);
  for (auto* head : {&m.classifier, &m.cluster}) {
    zero(head->linear.weight);
    zero(head->linear.bias);
  }
  Rng rng(2);
  Tape<double> t;
  const auto f = m.backbone.encode(t, random_inputs(4, {1, 6, 6}, rng));
  for (double v : m.classifier.probabilities(t, f).values()) CHECK(v == doctest::Approx(0.25));
  for (double v : m.cluster.probabilities(t, f).values()) CHECK(v == doctest::Approx(0.2));
}

TEST_CASE("evaluation is deterministic") {
  ModelSet<double> m(conv_spec(), 9);
  Rng rng(2);
  const auto x = random_inputs(3, {1, 8, 8}, rng);
  Tape<double> t1, t2;
  const auto a = m.classifier.logits(t1, m.backbone.encode(t1, x));
  const auto b = m.classifier.logits(t2, m.backbone.encode(t2, x));
  CHECK(std::vector<double>(a.values().begin(), a.values().end()) ==
        std::vector<double>(b.values().begin(), b.values().end()));
}

TEST_CASE("argmax is invariant to a constant logit shift") {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    auto logits = test::random_tensor({1, 6}, rng, -3, 3);
    auto shifted = logits.clone();
    const double c = std::uniform_real_distribution<double>(-50, 50)(rng);
    for (auto& v : shifted.mutable_values()) v += c;
    const auto a = loss::argmax_one_hot(logits);
    const auto b = loss::argmax_one_hot(shifted);
    REQUIRE(std::vector<double>(a.values().begin(), a.values().end()) ==
            std::vector<double>(b.values().begin(), b.values().end()));
  }
}

TEST_CASE("probability rows sum to one on random inputs") {
  Rng rng(8);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ModelSet<double> m(mlp_spec(), seed);
    Tape<double> t;
    const auto f = m.backbone.encode(t, random_inputs(8, {1, 6, 6}, rng));
    for (const auto& p : {m.classifier.probabilities(t, f), m.cluster.probabilities(t, f)}) {
      const std::size_t k = p.dim(1);
      for (std::size_t i = 0; i < 8; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < k; ++j) s += p.values()[i * k + j];
        REQUIRE(std::abs(s - 1.0) <= 1e-6);
      }
    }
  }
}

TEST_CASE("decoder output is bounded") {
  Rng rng(13);
  for (const auto& spec : {mlp_spec(), conv_spec()}) {
    ModelSet<double> m(spec, 5);
    for (const auto& p : m.parameters())
      for (auto& v : Tensor<double>(p.tensor).mutable_values()) v *= 20.0;
    Tape<double> t;
    const auto r = m.decoder.decode(t, test::random_tensor({16, 32}, rng, -5, 5));
    for (double v : r.values()) REQUIRE((v >= 0.0 && v <= 1.0));
  }
}

TEST_CASE("reconstruction loss gradient w.r.t. decoder passes finite differences") {
  for (const auto& spec : {mlp_spec(), conv_spec()}) {
    ModelSet<double> m(spec, 4);
    Rng rng(3);
    const auto x = random_inputs(3, spec.input_shape, rng);
    std::vector<Tensor<double>> psi;
    for (const auto& p : m.parameters())
      if (p.name.rfind("decoder.", 0) == 0) psi.push_back(p.tensor);
    REQUIRE_FALSE(psi.empty());
    auto f = [&](Tape<double>& t) {
      const auto feats = ad::detach(m.backbone.encode(t, x));
      return loss::reconstruction_loss(t, m.decoder.decode(t, feats), x);
    };
    CHECK(ad::grad_check_params(f, psi, 1e-5) <= 1e-4);
  }
}

TEST_CASE("initialization is seed-deterministic") {
  auto flat = [](const ModelSet<double>& m) {
    std::vector<double> v;
    for (const auto& p : m.parameters()) v.insert(v.end(), p.tensor.values().begin(), p.tensor.values().end());
    return v;
  };
  CHECK(flat(ModelSet<double>(conv_spec(), 7)) == flat(ModelSet<double>(conv_spec(), 7)));
  CHECK_FALSE(flat(ModelSet<double>(conv_spec(), 7)) == flat(ModelSet<double>(conv_spec(), 8)));
}

TEST_CASE("one backward populates every module") {
  ModelSet<double> m(mlp_spec(), 4);
  Rng rng(3);
  const auto x = random_inputs(6, {1, 6, 6}, rng);
  const auto params = m.parameters();
  for (const auto& p : params) Tensor<double>(p.tensor).set_requires_grad(true);
  Tape<double> t;
  const auto f = m.backbone.encode(t, x);
  const auto labels = loss::one_hot<double>(std::vector<std::int32_t>{0, 1, 2, 3, 0, 1}, 4);
  const auto cls = loss::bootstrap_loss(t, m.classifier.log_probabilities(t, f), labels, 0.5);
  const auto rec = loss::reconstruction_loss(t, m.decoder.decode(t, f), x);
  const auto pc = m.cluster.probabilities(t, f);
  const auto cl = loss::cluster_loss(t, pc, pc, 1.0);
  t.backward(ad::add(t, ad::add(t, cls, rec), cl.total));
  for (const auto& prefix : {"backbone.", "classifier.", "cluster.", "decoder."}) {
    bool any = false;
    for (const auto& p : params)
      if (p.name.rfind(prefix, 0) == 0 && p.tensor.has_grad())
        for (double g : p.tensor.grad()) any = any || g != 0.0;
    INFO(prefix);
    CHECK(any);
  }
}
