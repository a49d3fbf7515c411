// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>

#include "nlr/augment.hpp"
#include "nlr/config.hpp"
#include "nlr/dataset.hpp"
#include "nlr/models.hpp"

namespace nlr {

/// Builds the model set for `cfg` and loads the checkpoint into it. Throws
/// HashMismatchError when the checkpoint came from another configuration.
ModelSet<float> load_models(const TrainConfig& cfg, const Shape& input_shape,
                            const std::filesystem::path& checkpoint);

/// One row per sample:
///   index,f0..f{d-1},noisy_label,clean_label,cluster,predicted,corrupted
/// Returns the number of rows written.
std::size_t write_embeddings(const ModelSet<float>& models, const LabeledDataset& ds,
                             const std::filesystem::path& path);

/// Mean squared error of decode(encode(x)) against x over all samples.
double reconstruction_mse(const ModelSet<float>& models, const LabeledDataset& ds);

struct CutoutReconstruction {
  double mse = 0;         // whole image, against the original
  double masked_mse = 0;  // erased pixels only
};

/// Erases a square of side `size` (fraction of the image) at a per-sample
/// random position, reconstructs, and scores against the original.
CutoutReconstruction cutout_reconstruction(const ModelSet<float>& models, const LabeledDataset& ds,
                                           double size, std::uint64_t seed);

/// Writes a grid image with one row per sample and three panels per row:
/// augmented input, reconstruction, original. PGM for single-channel images,
/// PPM for three channels (other channel counts show channel 0).
void write_gallery(const ModelSet<float>& models, const LabeledDataset& ds, const AugmentPolicy& policy,
                   std::uint64_t seed, std::size_t count, const std::filesystem::path& path);

}  // namespace nlr
