// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "nlr/tensor.hpp"

namespace nlr {

/// Features plus clean/noisy labels. Only noisy labels are visible to
/// training objectives; clean labels serve evaluation.
struct LabeledDataset {
  Shape input_shape;  // per sample: {D} for vectors, {C, H, W} for images
  std::size_t num_classes = 0;
  std::vector<float> features;  // size() * numel(input_shape), row-major
  std::vector<std::int32_t> clean_labels;
  std::vector<std::int32_t> noisy_labels;
  std::vector<std::uint8_t> corrupted;
  bool noise_applied = false;

  std::size_t size() const noexcept { return clean_labels.size(); }
  std::size_t sample_size() const { return numel(input_shape); }
  bool is_image() const noexcept { return input_shape.size() == 3; }
  std::span<const float> sample(std::size_t i) const {
    return std::span<const float>(features).subspan(i * sample_size(), sample_size());
  }

  /// Throws std::invalid_argument describing the first broken invariant.
  void validate() const;

  /// Rows [begin, end) as a new dataset.
  LabeledDataset slice(std::size_t begin, std::size_t end) const;

  bool operator==(const LabeledDataset&) const = default;
};

struct BlobOptions {
  /// Latent dimensionality for image-shaped data; each class is a Gaussian
  /// cluster in this latent space, rendered through fixed smooth basis images.
  std::size_t latent_dims = 8;
  double pixel_noise = 0.02;
};

/// Balanced class-conditional Gaussian clusters. Class means sit at distance
/// `separation` from the origin (axis-aligned when dims >= C, on a circle in
/// the first two dims otherwise). With a rank-3 shape the clusters live in a
/// latent space and are rendered to images with values in [0, 1].
LabeledDataset generate_blobs(std::size_t num_samples, std::size_t num_classes,
                              const Shape& shape, double separation, std::uint64_t seed,
                              const BlobOptions& options = {});

enum class NoiseKind { symmetric, asymmetric };

std::string to_string(NoiseKind kind);
NoiseKind parse_noise_kind(const std::string& s);

struct NoiseSpec {
  NoiseKind kind = NoiseKind::symmetric;
  double epsilon = 0.0;
  std::size_t num_classes = 2;
  std::uint64_t seed = 0;
  /// Asymmetric only: whether class C-1 flips to class 0.
  bool wrap_around = true;
};

/// Corrupts exactly round(epsilon * n_k) labels of every class k.
/// Symmetric: victims move uniformly to one of the other C-1 classes.
/// Asymmetric: victims move to (k + 1) mod C.
/// Throws std::logic_error if noise was already injected.
LabeledDataset inject_noise(const LabeledDataset& ds, const NoiseSpec& spec);

struct TransitionMatrix {
  std::size_t num_classes = 0;
  std::vector<double> p;            // row-major C×C; NaN on undefined rows
  std::vector<std::size_t> counts;  // clean samples per row
  std::vector<bool> defined;        // false when the clean class is empty

  double at(std::size_t clean, std::size_t noisy) const { return p[clean * num_classes + noisy]; }
};

TransitionMatrix empirical_transition_matrix(const LabeledDataset& ds);

void write_transition_csv(const TransitionMatrix& m, const std::filesystem::path& path);

/// Little-endian binary:
///   "NLRDSET\0" | u32 version | u32 C | u64 N | u32 rank | u64 dims[rank]
///   | u8 noise_applied | f32 features[N*D] | i32 clean[N] | i32 noisy[N]
///   | u8 corrupted[N]
inline constexpr std::uint32_t kDatasetFormatVersion = 1;

void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path);
LabeledDataset load_dataset(const std::filesystem::path& path);

/// index,clean_label,noisy_label,corrupted
void write_label_csv(const LabeledDataset& ds, const std::filesystem::path& path);

}  // namespace nlr
