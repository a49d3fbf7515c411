// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <map>

#include "nlr/augment.hpp"
#include "support.hpp"

using namespace nlr;

namespace {

const Shape kImage{1, 12, 12};

std::vector<float> mid_range_image(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<float> u(0.4f, 0.6f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

AugmentPipeline single(AugmentKind kind, std::array<double, 3> params, std::uint64_t seed = 0) {
  AugmentOp op;
  op.kind = kind;
  op.params = params;
  op.seed = seed;
  AugmentPipeline p;
  p.ops = {op};
  p.num_ops_sampled = 1;
  return p;
}

}  // namespace

TEST_CASE("magnitude zero samples identity-strength ops") {
  AugmentPolicy policy;
  policy.magnitude = 0.0;
  policy.num_ops = 3;
  const auto x = mid_range_image(numel(kImage), 1);
  std::vector<float> out(x.size());
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto p = sample_pipeline(policy, s);
    for (const auto& op : p.ops) {
      switch (op.kind) {
        case AugmentKind::cutout: CHECK(op.params[2] == 0.0); break;
        case AugmentKind::gaussian_noise: CHECK(op.params[0] == 0.0); break;
        case AugmentKind::brightness_shift: CHECK(std::abs(op.params[0]) == 0.0); break;
        case AugmentKind::contrast_scale: CHECK(op.params[0] == 1.0); break;
        case AugmentKind::translate: CHECK((op.params[0] == 0.0 && op.params[1] == 0.0)); break;
        case AugmentKind::horizontal_flip: CHECK(op.params[0] == 0.0); break;
      }
    }
    apply(p, x, kImage, out);
    REQUIRE(out == x);
  }
}

TEST_CASE("same seed gives the same pipeline") {
  AugmentPolicy policy;
  CHECK(sample_pipeline(policy, 42) == sample_pipeline(policy, 42));
  CHECK_FALSE(sample_pipeline(policy, 42) == sample_pipeline(policy, 43));
}

TEST_CASE("op kinds are drawn uniformly per slot") {
  AugmentPolicy policy;
  policy.num_ops = 2;
  std::vector<std::map<AugmentKind, int>> freq(2);
  const int n = 10000;
  for (int s = 0; s < n; ++s) {
    const auto p = sample_pipeline(policy, derive_seed({77, static_cast<std::uint64_t>(s)}));
    REQUIRE(p.ops.size() == 2);
    REQUIRE(p.num_ops_sampled == 2);
    for (std::size_t slot = 0; slot < 2; ++slot) ++freq[slot][p.ops[slot].kind];
  }
  for (const auto& slot : freq)
    for (auto k : all_augment_kinds()) CHECK(std::abs(slot.at(k) / double(n) - 1.0 / 6) <= 0.02);
}

TEST_CASE("sampling rejects an empty pool or zero ops") {
  AugmentPolicy policy;
  policy.pool.clear();
  CHECK_THROWS_AS(sample_pipeline(policy, 1), std::invalid_argument);
  policy = {};
  policy.num_ops = 0;
  CHECK_THROWS_AS(sample_pipeline(policy, 1), std::invalid_argument);
}

TEST_CASE("cutout over the whole image fills a constant") {
  const auto x = mid_range_image(numel(kImage), 2);
  std::vector<float> out(x.size());
  apply(single(AugmentKind::cutout, {0.5, 0.5, 1.0}), x, kImage, out);
  for (float v : out) REQUIRE(v == out[0]);
  const auto mask = cutout_mask(single(AugmentKind::cutout, {0.5, 0.5, 1.0}).ops[0], kImage);
  for (auto m : mask) REQUIRE(m == 1);
}

TEST_CASE("gaussian noise has the requested spread") {
  const Shape shape{1, 100, 100};
  const auto x = mid_range_image(numel(shape), 3);
  std::vector<float> out(x.size());
  apply(single(AugmentKind::gaussian_noise, {0.1, 0, 0}, 5), x, shape, out);
  double s = 0, s2 = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(out[i]) - x[i];
    s += d;
    s2 += d * d;
  }
  const double n = static_cast<double>(x.size());
  const double sd = std::sqrt(s2 / n - (s / n) * (s / n));
  CHECK(std::abs(sd - 0.1) <= 0.005);
}

TEST_CASE("apply keeps outputs in range and never mutates the input") {
  AugmentPolicy policy;
  policy.magnitude = 1.0;
  Rng rng(4);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> x(numel(kImage));
  for (auto& v : x) v = u(rng);
  const auto copy = x;
  std::vector<float> out(x.size()), again(x.size());
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto p = sample_pipeline(policy, s);
    apply(p, x, kImage, out);
    apply(p, x, kImage, again);
    REQUIRE(out == again);
    for (float v : out) REQUIRE((v >= 0.0f && v <= 1.0f));
  }
  CHECK(x == copy);
}

TEST_CASE("spatial ops need image inputs") {
  const std::vector<float> x(8, 0.5f);
  std::vector<float> out(8);
  CHECK_THROWS_AS(apply(single(AugmentKind::cutout, {0.5, 0.5, 0.5}), x, {8}, out), ShapeError);
  CHECK_THROWS_AS(apply(single(AugmentKind::translate, {0.1, 0.1, 0}), x, {8}, out), ShapeError);
  CHECK_THROWS_AS(apply(single(AugmentKind::horizontal_flip, {1, 0, 0}), x, {8}, out), ShapeError);
  CHECK_NOTHROW(apply(single(AugmentKind::brightness_shift, {0.2, 0, 0}), x, {8}, out));
  CHECK(out[0] == doctest::Approx(0.7f));
}

TEST_CASE("flip twice is the identity") {
  const auto x = mid_range_image(numel(kImage), 6);
  std::vector<float> once(x.size()), twice(x.size());
  const auto flip = single(AugmentKind::horizontal_flip, {1, 0, 0});
  apply(flip, x, kImage, once);
  CHECK_FALSE(once == x);
  apply(flip, once, kImage, twice);
  CHECK(twice == x);
}
