// SPDX-License-Identifier: Apache-2.0
#include "nlr/export.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "nlr/checkpoint.hpp"
#include "nlr/error.hpp"
#include "nlr/rng.hpp"

namespace nlr {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kChunk = 256;
constexpr std::size_t kGalleryScale = 4;

std::size_t argmax_row(std::span<const float> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

Tensor<float> batch_of(const LabeledDataset& ds, std::size_t begin, std::size_t end) {
  const std::size_t d = ds.sample_size();
  std::vector<float> buf(ds.features.begin() + static_cast<std::ptrdiff_t>(begin * d),
                         ds.features.begin() + static_cast<std::ptrdiff_t>(end * d));
  return Tensor<float>::from_values(batch_shape(end - begin, ds.input_shape), std::move(buf));
}

std::vector<float> reconstruct(const ModelSet<float>& models, const Tensor<float>& x) {
  ad::Tape<float> tape;
  tape.set_recording(false);
  const auto out = models.decoder.decode(tape, models.backbone.encode(tape, x));
  return {out.values().begin(), out.values().end()};
}

}  // namespace

ModelSet<float> load_models(const TrainConfig& cfg, const Shape& input_shape, const fs::path& checkpoint) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const auto expected = config_hash(cfg);
  if (ck.config_hash != expected)
    throw HashMismatchError("checkpoint " + checkpoint.string() + " was written under config hash " +
                            hash_hex(ck.config_hash) + ", current config hashes to " + hash_hex(expected));
  ModelSet<float> models(cfg.model_spec(input_shape), cfg.seed.init);
  import_parameters(ck, models.parameters());
  return models;
}

std::size_t write_embeddings(const ModelSet<float>& models, const LabeledDataset& ds, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const std::size_t dim = models.backbone.feature_dim();
  out << "index";
  for (std::size_t j = 0; j < dim; ++j) out << ",f" << j;
  out << ",noisy_label,clean_label,cluster,predicted,corrupted\n";

  ad::Tape<float> tape;
  tape.set_recording(false);
  char buf[32];
  std::size_t rows = 0;
  for (std::size_t begin = 0; begin < ds.size(); begin += kChunk) {
    const std::size_t end = std::min(ds.size(), begin + kChunk);
    tape.clear();
    const auto feats = models.backbone.encode(tape, batch_of(ds, begin, end));
    const auto scores = models.cluster.logits(tape, feats);
    const auto class_scores = models.classifier.logits(tape, feats);
    const std::size_t k = scores.dim(1), c = class_scores.dim(1);
    for (std::size_t i = 0; i < end - begin; ++i) {
      const std::size_t idx = begin + i;
      out << idx;
      for (std::size_t j = 0; j < dim; ++j) {
        std::snprintf(buf, sizeof buf, ",%.7g", static_cast<double>(feats.values()[i * dim + j]));
        out << buf;
      }
      out << ',' << ds.noisy_labels[idx] << ',' << ds.clean_labels[idx] << ','
          << argmax_row(scores.values().subspan(i * k, k)) << ','
          << argmax_row(class_scores.values().subspan(i * c, c)) << ',' << static_cast<int>(ds.corrupted[idx]) << '\n';
      ++rows;
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
  return rows;
}

double reconstruction_mse(const ModelSet<float>& models, const LabeledDataset& ds) {
  double se = 0;
  for (std::size_t begin = 0; begin < ds.size(); begin += kChunk) {
    const std::size_t end = std::min(ds.size(), begin + kChunk);
    const auto x = batch_of(ds, begin, end);
    const auto r = reconstruct(models, x);
    for (std::size_t j = 0; j < r.size(); ++j) {
      const double e = static_cast<double>(r[j]) - static_cast<double>(x.values()[j]);
      se += e * e;
    }
  }
  return se / static_cast<double>(ds.features.size());
}

CutoutReconstruction cutout_reconstruction(const ModelSet<float>& models, const LabeledDataset& ds, double size,
                                           std::uint64_t seed) {
  if (!ds.is_image()) throw ShapeError("cutout_reconstruction: needs image inputs");
  const std::size_t d = ds.sample_size();
  double se = 0, se_masked = 0;
  std::size_t masked = 0;
  std::vector<float> erased(d);
  for (std::size_t begin = 0; begin < ds.size(); begin += kChunk) {
    const std::size_t end = std::min(ds.size(), begin + kChunk);
    const std::size_t b = end - begin;
    std::vector<float> buf(b * d);
    std::vector<std::uint8_t> mask(b * d);
    for (std::size_t i = 0; i < b; ++i) {
      Rng rng(derive_seed({seed, begin + i}));
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      AugmentOp op;
      op.kind = AugmentKind::cutout;
      op.params = {unit(rng), unit(rng), size};
      AugmentPipeline p;
      p.ops = {op};
      p.num_ops_sampled = 1;
      apply(p, ds.sample(begin + i), ds.input_shape, erased);
      std::copy(erased.begin(), erased.end(), buf.begin() + static_cast<std::ptrdiff_t>(i * d));
      const auto m = cutout_mask(op, ds.input_shape);
      std::copy(m.begin(), m.end(), mask.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    const auto r = reconstruct(models, Tensor<float>::from_values(batch_shape(b, ds.input_shape), std::move(buf)));
    for (std::size_t j = 0; j < r.size(); ++j) {
      const double e = static_cast<double>(r[j]) - static_cast<double>(ds.features[begin * d + j]);
      se += e * e;
      if (mask[j]) {
        se_masked += e * e;
        ++masked;
      }
    }
  }
  CutoutReconstruction out;
  out.mse = se / static_cast<double>(ds.features.size());
  out.masked_mse = masked ? se_masked / static_cast<double>(masked) : 0.0;
  return out;
}

void write_gallery(const ModelSet<float>& models, const LabeledDataset& ds, const AugmentPolicy& policy,
                   std::uint64_t seed, std::size_t count, const fs::path& path) {
  if (!ds.is_image()) throw ShapeError("write_gallery: needs image inputs");
  count = std::min(count, ds.size());
  if (count == 0) throw std::invalid_argument("write_gallery: nothing to draw");
  const std::size_t C = ds.input_shape[0], H = ds.input_shape[1], W = ds.input_shape[2];
  const std::size_t d = ds.sample_size();
  const bool color = C == 3;
  const std::size_t channels = color ? 3 : 1;

  std::vector<float> aug(count * d);
  for (std::size_t i = 0; i < count; ++i)
    apply(sample_pipeline(policy, derive_seed({seed, i})), ds.sample(i), ds.input_shape,
          std::span<float>(aug).subspan(i * d, d));
  const auto rec = reconstruct(models, Tensor<float>::from_values(batch_shape(count, ds.input_shape), aug));

  const std::size_t s = kGalleryScale, gap = 2;
  const std::size_t panel_w = W * s, panel_h = H * s;
  const std::size_t img_w = 3 * panel_w + 4 * gap, img_h = count * panel_h + (count + 1) * gap;
  std::vector<std::uint8_t> px(img_w * img_h * channels, 255);
  auto draw = [&](const float* src, std::size_t row, std::size_t col) {
    const std::size_t oy = gap + row * (panel_h + gap), ox = gap + col * (panel_w + gap);
    for (std::size_t y = 0; y < panel_h; ++y)
      for (std::size_t x = 0; x < panel_w; ++x)
        for (std::size_t c = 0; c < channels; ++c) {
          const float v = src[(c * H + y / s) * W + x / s];
          px[((oy + y) * img_w + ox + x) * channels + c] =
              static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
        }
  };
  for (std::size_t i = 0; i < count; ++i) {
    draw(aug.data() + i * d, i, 0);
    draw(rec.data() + i * d, i, 1);
    draw(ds.features.data() + i * d, i, 2);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << (color ? "P6" : "P5") << "\n" << img_w << " " << img_h << "\n255\n";
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace nlr
