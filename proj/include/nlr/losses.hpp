// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "nlr/autodiff.hpp"

namespace nlr::loss {

/// Probabilities entering a log are clamped to [kProbFloor, 1].
inline constexpr double kProbFloor = 1e-12;
/// Row sums of probability inputs may deviate from 1 by at most this much.
inline constexpr double kNormTolerance = 1e-4;

template <typename T>
Tensor<T> one_hot(std::span<const std::int32_t> labels, std::size_t num_classes);

/// One-hot of the per-row argmax; ties go to the lowest class id. The result
/// is a constant: no gradient flows through the selection.
template <typename T>
Tensor<T> argmax_one_hot(const Tensor<T>& scores);

/// Batch mean of -sum_k target_k * log_probs_k.
template <typename T>
Tensor<T> cross_entropy(ad::Tape<T>& tape, const Tensor<T>& log_probs, const Tensor<T>& targets);

/// Batch mean of -log p_true over softmax outputs (clamped log). Rows must be
/// normalized within kNormTolerance.
template <typename T>
Tensor<T> task_loss(ad::Tape<T>& tape, const Tensor<T>& pred_probs, const Tensor<T>& labels_onehot);

/// Mean over all elements of (x_hat - x)^2.
template <typename T>
Tensor<T> reconstruction_loss(ad::Tape<T>& tape, const Tensor<T>& x_hat, const Tensor<T>& x);

/// Batch mean of the per-row entropy -sum_k p log p, in [0, ln K].
template <typename T>
Tensor<T> conditional_entropy(ad::Tape<T>& tape, const Tensor<T>& cluster_probs);

/// KL(mean row || uniform) = sum_k pbar_k log(K pbar_k). Zero iff the batch
/// marginal is uniform; minimizing it maximizes the marginal entropy H(c).
template <typename T>
Tensor<T> marginal_entropy_term(ad::Tape<T>& tape, const Tensor<T>& cluster_probs);

/// Batch mean cross-entropy -sum_k p_clean log p_aug between the cluster
/// assignments of the clean and augmented views. With block_clean_grad the
/// clean view acts as a fixed target.
template <typename T>
Tensor<T> consistency_penalty(ad::Tape<T>& tape, const Tensor<T>& clean_probs,
                              const Tensor<T>& aug_probs, bool block_clean_grad = true);

template <typename T>
struct ClusterTerms {
  Tensor<T> total;
  Tensor<T> consistency;          // R
  Tensor<T> marginal_kl;          // KL(pbar || U), i.e. -H(c)
  Tensor<T> conditional_entropy;  // H(c|x)
};

/// R + lambda * KL(pbar || U) + lambda * H(c|x), i.e. R - lambda * I(x; c).
/// The marginal and conditional entropies use the clean view.
template <typename T>
ClusterTerms<T> cluster_loss(ad::Tape<T>& tape, const Tensor<T>& clean_probs,
                             const Tensor<T>& aug_probs, double lambda,
                             bool block_clean_grad = true);

/// alpha * CE(noisy) + (1 - alpha) * CE(argmax pseudo-label), both against
/// the same log-probabilities.
template <typename T>
Tensor<T> bootstrap_loss(ad::Tape<T>& tape, const Tensor<T>& log_pred,
                         const Tensor<T>& noisy_onehot, double alpha);

/// Ablation switches. A: bootstrap (off -> plain cross-entropy),
/// B: reconstruction, C: cluster regularization. With all three off the run
/// is the cross-entropy baseline, which must be requested via ce_baseline.
struct LossSwitches {
  bool bootstrap = true;
  bool reconstruction = true;
  bool cluster = true;
  bool ce_baseline = false;

  bool any_component() const { return bootstrap || reconstruction || cluster; }
  /// Throws std::invalid_argument when nothing is enabled.
  void validate() const;
};

struct LossBreakdown {
  double bootstrap = 0;  // classification term (bootstrap or plain CE)
  double reconstruction = 0;
  double cluster = 0;
  double cluster_consistency = 0;
  double cluster_marginal_kl = 0;
  double cluster_conditional_entropy = 0;
  double total = 0;

  bool operator==(const LossBreakdown&) const = default;
};

template <typename T>
struct LossTerms {
  Tensor<T> classification;
  Tensor<T> reconstruction;  // may be undefined when B is off
  ClusterTerms<T> cluster;   // may be undefined when C is off
};

template <typename T>
struct TotalLoss {
  Tensor<T> total;
  LossBreakdown breakdown;
};

/// Sum of the enabled terms. Disabled terms report 0 and stay off the graph.
template <typename T>
TotalLoss<T> total_loss(ad::Tape<T>& tape, const LossTerms<T>& terms, const LossSwitches& switches);

enum class AlphaKind { linear, cosine, step };

std::string to_string(AlphaKind kind);
AlphaKind parse_alpha_kind(const std::string& s);

/// alpha = 1 up to start_epoch, 0 from end_epoch on, non-increasing between.
/// step drops from 1 to 0 halfway between start and end.
struct AlphaSchedule {
  AlphaKind kind = AlphaKind::linear;
  double start_epoch = 0;
  double end_epoch = 1;
};

/// `epoch` may be fractional (per-step decay). Throws when start >= end or
/// epoch lies outside [0, total_epochs].
double alpha_at(const AlphaSchedule& schedule, double epoch, std::size_t total_epochs);

}  // namespace nlr::loss
