// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nlr/tensor.hpp"

namespace nlr {

enum class AugmentKind {
  cutout,
  gaussian_noise,
  brightness_shift,
  contrast_scale,
  translate,
  horizontal_flip,
};

std::string to_string(AugmentKind kind);
AugmentKind parse_augment_kind(const std::string& s);
const std::vector<AugmentKind>& all_augment_kinds();
/// True for ops that only make sense on {C, H, W} inputs.
bool is_spatial(AugmentKind kind);

/// One concrete transform. Parameter meaning per kind (geometry is given as
/// fractions of the image extent so ops are shape independent):
///   cutout            {center_y, center_x, size}     all in [0, 1]
///   gaussian_noise    {sigma}
///   brightness_shift  {delta}
///   contrast_scale    {factor}                        around the sample mean
///   translate         {dy, dx}                        fractions of H and W
///   horizontal_flip   {apply}                         0 or 1
/// `seed` drives the noise draw, so an op is a pure function of its input.
struct AugmentOp {
  AugmentKind kind = AugmentKind::gaussian_noise;
  std::array<double, 3> params{};
  std::uint64_t seed = 0;

  bool operator==(const AugmentOp&) const = default;
};

struct AugmentPolicy {
  std::vector<AugmentKind> pool = all_augment_kinds();
  std::size_t num_ops = 2;
  double magnitude = 0.5;  // in [0, 1]; 0 makes every op the identity
};

struct AugmentPipeline {
  std::vector<AugmentOp> ops;
  std::size_t num_ops_sampled = 0;
  double magnitude = 0.0;

  bool operator==(const AugmentPipeline&) const = default;
};

/// Draws num_ops kinds uniformly (with replacement) from the pool and
/// resolves their parameters at the policy magnitude.
AugmentPipeline sample_pipeline(const AugmentPolicy& policy, std::uint64_t seed);

/// Writes T(x) into `out`. Image inputs ({C, H, W}) are clamped to [0, 1].
/// Throws ShapeError for spatial ops on vector inputs.
void apply(const AugmentPipeline& pipeline, std::span<const float> x, const Shape& shape,
           std::span<float> out);

Tensor<float> apply(const AugmentPipeline& pipeline, const Tensor<float>& x);

/// Pixel mask of the region a cutout op erases (1 inside), for an image of the
/// given shape. Zero everywhere for other kinds.
std::vector<std::uint8_t> cutout_mask(const AugmentOp& op, const Shape& shape);

}  // namespace nlr
