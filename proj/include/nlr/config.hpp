// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nlr/augment.hpp"
#include "nlr/dataset.hpp"
#include "nlr/losses.hpp"
#include "nlr/models.hpp"

namespace nlr {

inline constexpr int kConfigSchemaVersion = 1;

enum class DataSource { images, blobs, file };

std::string to_string(DataSource source);
DataSource parse_data_source(const std::string& s);

struct DataConfig {
  DataSource source = DataSource::images;
  std::string path;                // source = file
  std::size_t samples = 2000;      // training samples (generated sources)
  std::size_t val_samples = 1000;  // clean held-out samples (generated sources)
  double val_fraction = 0.2;       // held-out share (source = file)
  std::size_t classes = 4;
  Shape shape{1, 12, 12};
  double separation = 3.0;
  BlobOptions blob;
};

struct NoiseConfig {
  NoiseKind kind = NoiseKind::symmetric;
  double epsilon = 0.6;
  bool wrap_around = true;
};

struct ModelConfig {
  BackboneKind backbone = BackboneKind::mlp;
  std::vector<std::size_t> hidden{256, 128};
  std::vector<std::size_t> channels{8, 16, 32};
  std::size_t feature_dim = 64;
  std::size_t clusters = 0;  // 0: one cluster per class
};

struct LossConfig {
  loss::LossSwitches switches;
  double lambda = 1.0;
  bool block_clean_grad = true;
  bool bootstrap_on_augmented = true;
};

/// Schedule boundaries are fractions of the epoch budget.
struct AlphaConfig {
  loss::AlphaKind kind = loss::AlphaKind::linear;
  double start = 0.1;
  double end = 0.9;
  bool per_step = false;
};

struct OptimConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  bool decoupled_weight_decay = false;
  std::vector<double> milestones{0.5, 0.75};
  double step_ratio = 0.1;
};

struct LoopConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  double divergence_threshold = 1e4;
  bool record_time = false;  // wall time in metrics.csv breaks byte equality
};

struct SeedConfig {
  std::uint64_t init = 1;
  std::uint64_t data = 1;
  std::uint64_t augment = 1;
  std::uint64_t noise = 1;
};

struct TrainConfig {
  DataConfig data;
  NoiseConfig noise;
  ModelConfig model;
  LossConfig losses;
  AlphaConfig alpha;
  OptimConfig optim;
  AugmentPolicy augment;
  LoopConfig train;
  SeedConfig seed;

  /// Model description for an input of the configured shape.
  ModelSpec model_spec(const Shape& input_shape) const;
  loss::AlphaSchedule alpha_schedule() const;
  void set_all_seeds(std::uint64_t s);
};

/// Every problem with the configuration; empty when valid.
std::vector<std::string> validate(const TrainConfig& cfg);

/// Parses "key = value" lines ('#' starts a comment) and then applies
/// "key=value" overrides. Unknown keys, malformed values, a missing or
/// different schema_version and semantic problems are all collected into one
/// ConfigError.
TrainConfig parse_config(const std::string& text, const std::vector<std::string>& overrides = {});
TrainConfig load_config(const std::filesystem::path& path,
                        const std::vector<std::string>& overrides = {});

/// Default configuration with overrides applied; throws ConfigError.
TrainConfig default_config(const std::vector<std::string>& overrides = {});

/// Canonical text with every key, in a fixed order.
std::string to_text(const TrainConfig& cfg);

/// 64-bit FNV-1a of the canonical text.
std::uint64_t config_hash(const TrainConfig& cfg);
std::string hash_hex(std::uint64_t h);

/// "12x12" -> {1, 12, 12}, "3x8x8" -> {3, 8, 8}, "16" -> {16}.
Shape parse_shape(const std::string& s);
std::string format_shape(const Shape& s);

}  // namespace nlr
