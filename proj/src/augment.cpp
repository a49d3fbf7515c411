// SPDX-License-Identifier: Apache-2.0
#include "nlr/augment.hpp"

#include <algorithm>
#include <cmath>

#include "nlr/error.hpp"
#include "nlr/rng.hpp"

namespace nlr {

namespace {

// Full-magnitude strengths.
constexpr double kMaxCutoutSize = 0.5;
constexpr double kMaxNoiseSigma = 0.2;
constexpr double kMaxBrightness = 0.3;
constexpr double kMaxContrast = 0.5;
constexpr double kMaxTranslate = 0.25;

struct Rect {
  std::size_t top, left, h, w;
};

Rect cutout_rect(const AugmentOp& op, std::size_t H, std::size_t W) {
  auto extent = [&](std::size_t n) {
    return std::min(n, static_cast<std::size_t>(
                           std::llround(std::clamp(op.params[2], 0.0, 1.0) * static_cast<double>(n))));
  };
  const std::size_t h = extent(H), w = extent(W);
  auto origin = [](double c, std::size_t n, std::size_t len) {
    return static_cast<std::size_t>(
        std::llround(std::clamp(c, 0.0, 1.0) * static_cast<double>(n - len)));
  };
  return {origin(op.params[0], H, h), origin(op.params[1], W, w), h, w};
}

void apply_op(const AugmentOp& op, const Shape& shape, std::vector<float>& buf) {
  const bool image = shape.size() == 3;
  if (!image && is_spatial(op.kind))
    throw ShapeError("augment: " + to_string(op.kind) + " requires an image-shaped input, got " +
                     to_string(shape));
  switch (op.kind) {
    case AugmentKind::gaussian_noise: {
      const double sigma = op.params[0];
      if (sigma == 0.0) break;
      Rng rng(op.seed);
      std::normal_distribution<double> n(0.0, sigma);
      for (auto& v : buf) v = static_cast<float>(v + n(rng));
      break;
    }
    case AugmentKind::brightness_shift: {
      const auto delta = static_cast<float>(op.params[0]);
      if (delta == 0.0f) break;
      for (auto& v : buf) v += delta;
      break;
    }
    case AugmentKind::contrast_scale: {
      if (op.params[0] == 1.0) break;
      double m = 0;
      for (float v : buf) m += v;
      m /= static_cast<double>(buf.size());
      const double f = op.params[0];
      for (auto& v : buf) v = static_cast<float>(m + f * (v - m));
      break;
    }
    case AugmentKind::cutout: {
      const std::size_t C = shape[0], H = shape[1], W = shape[2];
      const Rect r = cutout_rect(op, H, W);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = r.top; y < r.top + r.h; ++y)
          for (std::size_t x = r.left; x < r.left + r.w; ++x) buf[(c * H + y) * W + x] = 0.0f;
      break;
    }
    case AugmentKind::translate: {
      const std::size_t C = shape[0], H = shape[1], W = shape[2];
      const auto dy = static_cast<std::ptrdiff_t>(std::llround(op.params[0] * static_cast<double>(H)));
      const auto dx = static_cast<std::ptrdiff_t>(std::llround(op.params[1] * static_cast<double>(W)));
      if (dy == 0 && dx == 0) break;
      std::vector<float> src = buf;
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x) {
            const auto sy = static_cast<std::ptrdiff_t>(y) - dy;
            const auto sx = static_cast<std::ptrdiff_t>(x) - dx;
            const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(H) &&
                                sx < static_cast<std::ptrdiff_t>(W);
            buf[(c * H + y) * W + x] =
                inside ? src[(c * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)]
                       : 0.0f;
          }
      break;
    }
    case AugmentKind::horizontal_flip: {
      if (op.params[0] < 0.5) break;
      const std::size_t C = shape[0], H = shape[1], W = shape[2];
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y) {
          auto row = buf.begin() + static_cast<std::ptrdiff_t>((c * H + y) * W);
          std::reverse(row, row + static_cast<std::ptrdiff_t>(W));
        }
      break;
    }
  }
  if (image)
    for (auto& v : buf) v = std::clamp(v, 0.0f, 1.0f);
}

}  // namespace

std::string to_string(AugmentKind kind) {
  switch (kind) {
    case AugmentKind::cutout: return "cutout";
    case AugmentKind::gaussian_noise: return "gaussian-noise";
    case AugmentKind::brightness_shift: return "brightness-shift";
    case AugmentKind::contrast_scale: return "contrast-scale";
    case AugmentKind::translate: return "translate";
    case AugmentKind::horizontal_flip: return "horizontal-flip";
  }
  return "?";
}

AugmentKind parse_augment_kind(const std::string& s) {
  for (auto k : all_augment_kinds())
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown augmentation '" + s + "'");
}

const std::vector<AugmentKind>& all_augment_kinds() {
  static const std::vector<AugmentKind> kinds{
      AugmentKind::cutout,         AugmentKind::gaussian_noise, AugmentKind::brightness_shift,
      AugmentKind::contrast_scale, AugmentKind::translate,      AugmentKind::horizontal_flip};
  return kinds;
}

bool is_spatial(AugmentKind kind) {
  return kind == AugmentKind::cutout || kind == AugmentKind::translate ||
         kind == AugmentKind::horizontal_flip;
}

AugmentPipeline sample_pipeline(const AugmentPolicy& policy, std::uint64_t seed) {
  if (policy.pool.empty()) throw std::invalid_argument("sample_pipeline: empty op pool");
  if (policy.num_ops == 0) throw std::invalid_argument("sample_pipeline: num_ops must be >= 1");
  if (!(policy.magnitude >= 0.0 && policy.magnitude <= 1.0))
    throw std::invalid_argument("sample_pipeline: magnitude must lie in [0, 1]");

  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, policy.pool.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto sign = [&] { return unit(rng) < 0.5 ? -1.0 : 1.0; };
  const double m = policy.magnitude;

  AugmentPipeline p;
  p.num_ops_sampled = policy.num_ops;
  p.magnitude = m;
  for (std::size_t i = 0; i < policy.num_ops; ++i) {
    AugmentOp op;
    op.kind = policy.pool[pick(rng)];
    switch (op.kind) {
      case AugmentKind::cutout:
        op.params = {unit(rng), unit(rng), m * kMaxCutoutSize};
        break;
      case AugmentKind::gaussian_noise:
        op.params = {m * kMaxNoiseSigma, 0, 0};
        break;
      case AugmentKind::brightness_shift:
        op.params = {sign() * m * kMaxBrightness, 0, 0};
        break;
      case AugmentKind::contrast_scale:
        op.params = {1.0 + sign() * m * kMaxContrast, 0, 0};
        break;
      case AugmentKind::translate: {
        const double dy = (2 * unit(rng) - 1) * m * kMaxTranslate;
        const double dx = (2 * unit(rng) - 1) * m * kMaxTranslate;
        op.params = {dy, dx, 0};
        break;
      }
      case AugmentKind::horizontal_flip:
        op.params = {unit(rng) < m ? 1.0 : 0.0, 0, 0};
        break;
    }
    op.seed = rng();
    p.ops.push_back(op);
  }
  return p;
}

void apply(const AugmentPipeline& pipeline, std::span<const float> x, const Shape& shape,
           std::span<float> out) {
  if (x.size() != numel(shape) || out.size() != x.size())
    throw ShapeError("augment: buffer sizes do not match shape " + to_string(shape));
  std::vector<float> buf(x.begin(), x.end());
  for (const auto& op : pipeline.ops) apply_op(op, shape, buf);
  std::copy(buf.begin(), buf.end(), out.begin());
}

Tensor<float> apply(const AugmentPipeline& pipeline, const Tensor<float>& x) {
  auto out = Tensor<float>::zeros(x.shape());
  apply(pipeline, x.values(), x.shape(), out.mutable_values());
  return out;
}

std::vector<std::uint8_t> cutout_mask(const AugmentOp& op, const Shape& shape) {
  std::vector<std::uint8_t> mask(numel(shape), 0);
  if (op.kind != AugmentKind::cutout || shape.size() != 3) return mask;
  const std::size_t C = shape[0], H = shape[1], W = shape[2];
  const Rect r = cutout_rect(op, H, W);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = r.top; y < r.top + r.h; ++y)
      for (std::size_t x = r.left; x < r.left + r.w; ++x) mask[(c * H + y) * W + x] = 1;
  return mask;
}

}  // namespace nlr
