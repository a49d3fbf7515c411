// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nlr/checkpoint.hpp"
#include "nlr/config.hpp"
#include "nlr/dataset.hpp"
#include "nlr/losses.hpp"
#include "nlr/models.hpp"
#include "nlr/optim.hpp"

namespace nlr {

struct MetricsRecord {
  std::size_t epoch = 0;
  double lr = 0;
  double alpha = 1;
  loss::LossBreakdown loss;  // sample-weighted means over the epoch
  double train_acc_noisy = 0;
  double val_acc_clean = 0;
  double corrupted_subset_acc = 0;  // against clean labels; 0 when nothing is corrupted
  double seconds = 0;

  bool operator==(const MetricsRecord&) const = default;
};

struct DataSplit {
  LabeledDataset train;  // noisy labels injected
  LabeledDataset val;    // clean
};

/// Builds the training and validation sets the configuration describes and
/// corrupts the training labels.
DataSplit prepare_data(const TrainConfig& cfg);

/// Seed of the augmentation pipeline applied to sample `index` in `epoch`.
std::uint64_t augment_seed(std::uint64_t base, std::size_t epoch, std::size_t index);

/// Augmentation policy usable on the given input shape: spatial ops are
/// dropped for vector inputs.
AugmentPolicy effective_policy(const AugmentPolicy& policy, const Shape& input_shape);

struct Accuracy {
  double train_noisy = 0;
  double val_clean = 0;
  double corrupted_clean = 0;
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, DataSplit data);

  /// One shuffled pass: per batch, augment, build every enabled loss on one
  /// graph, backpropagate once and take one SGD step; then evaluate.
  MetricsRecord train_epoch(std::size_t epoch);

  Accuracy evaluate() const;

  /// Class predictions on unaugmented inputs.
  std::vector<std::int32_t> predict(const LabeledDataset& ds) const;

  /// Parameters, velocities and scalar metadata.
  Checkpoint snapshot(const std::map<std::string, double>& meta = {}) const;
  void restore(const Checkpoint& ckpt);

  const TrainConfig& config() const { return cfg_; }
  const DataSplit& data() const { return data_; }
  ModelSet<float>& models() { return models_; }
  const ModelSet<float>& models() const { return models_; }
  const ParameterList<float>& parameters() const { return params_; }
  OptimizerState<float>& optimizer() { return opt_; }

 private:
  TrainConfig cfg_;
  DataSplit data_;
  ModelSet<float> models_;
  ParameterList<float> params_;
  OptimizerState<float> opt_;
  AugmentPolicy policy_;
  std::uint64_t hash_ = 0;
};

struct RunSummary {
  double best_acc = 0;
  std::size_t best_epoch = 0;
  double last_acc = 0;
  double gap = 0;  // best_acc - last_acc
  std::size_t epochs_completed = 0;
  std::uint64_t config_hash = 0;
};

struct RunOptions {
  bool resume = false;
  std::size_t stop_after = 0;  // stop once this many epochs are done; 0 = all
  std::ostream* log = nullptr;
};

/// Trains under `cfg`, writing into run_dir:
///   config.copy, metrics.csv, timing.csv, summary.txt,
///   checkpoints/{init,best,last}.ckpt
/// last.ckpt is refreshed after every epoch, so a crashed run resumes from it.
RunSummary run_experiment(const TrainConfig& cfg, const std::filesystem::path& run_dir,
                          const RunOptions& options = {});

std::string metrics_header();
std::string metrics_row(const MetricsRecord& m);

struct AblationRow {
  std::string name;  // CE, +A, +B, +C, +A+B, +A+C, +A+B+C
  loss::LossSwitches switches;
  std::optional<RunSummary> summary;
  std::string error;  // set when the run failed
};

/// The seven ablation cells in table order.
std::vector<AblationRow> ablation_grid();

/// Directory name of an ablation cell ("ce", "a", "ab", ...).
std::string ablation_dir_name(const std::string& row_name);

/// Runs every cell with the base configuration's seeds; a failing cell is
/// recorded and the rest still run. Writes ablation.csv into out_dir.
std::vector<AblationRow> run_ablation(const TrainConfig& base, const std::filesystem::path& out_dir,
                                      std::ostream* log = nullptr);

void print_ablation_table(const TrainConfig& base, const std::vector<AblationRow>& rows,
                          std::ostream& out);

void write_summary(const RunSummary& s, const std::filesystem::path& path);
RunSummary read_summary(const std::filesystem::path& path);

}  // namespace nlr
