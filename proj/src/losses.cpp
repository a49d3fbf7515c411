// SPDX-License-Identifier: Apache-2.0
#include "nlr/losses.hpp"

#include <cmath>
#include <numbers>

namespace nlr::loss {

namespace {

template <typename T>
void require_probability_rows(const char* who, const Tensor<T>& p) {
  if (p.rank() != 2) throw ShapeError(std::string(who) + ": expected (batch, K), got " + nlr::to_string(p.shape()));
  const std::size_t m = p.dim(0), n = p.dim(1);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < n; ++j) s += static_cast<double>(p.values()[i * n + j]);
    if (std::abs(s - 1.0) > kNormTolerance)
      throw std::invalid_argument(std::string(who) + ": row " + std::to_string(i) + " sums to " +
                                  std::to_string(s) + ", not 1");
  }
}

template <typename T>
void require_same(const char* who, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(who) + ": shape mismatch " + nlr::to_string(a.shape()) + " vs " +
                     nlr::to_string(b.shape()));
}

/// -(1/B) * sum(a * b)
template <typename T>
Tensor<T> neg_batch_mean_dot(ad::Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  const T inv = T(-1) / static_cast<T>(a.dim(0));
  return ad::scale(tape, ad::sum(tape, ad::mul(tape, a, b)), inv);
}

}  // namespace

template <typename T>
Tensor<T> one_hot(std::span<const std::int32_t> labels, std::size_t num_classes) {
  auto t = Tensor<T>::zeros({labels.size(), num_classes});
  auto v = t.mutable_values();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
      throw std::invalid_argument("one_hot: label " + std::to_string(labels[i]) + " out of range");
    v[i * num_classes + static_cast<std::size_t>(labels[i])] = T(1);
  }
  return t;
}

template <typename T>
Tensor<T> argmax_one_hot(const Tensor<T>& scores) {
  if (scores.rank() != 2) throw ShapeError("argmax_one_hot: expected (batch, K)");
  const std::size_t m = scores.dim(0), n = scores.dim(1);
  auto t = Tensor<T>::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j)
      if (scores.values()[i * n + j] > scores.values()[i * n + best]) best = j;
    t.mutable_values()[i * n + best] = T(1);
  }
  return t;
}

template <typename T>
Tensor<T> cross_entropy(ad::Tape<T>& tape, const Tensor<T>& log_probs, const Tensor<T>& targets) {
  require_same("cross_entropy", log_probs, targets);
  return neg_batch_mean_dot(tape, targets, log_probs);
}

template <typename T>
Tensor<T> task_loss(ad::Tape<T>& tape, const Tensor<T>& pred_probs, const Tensor<T>& labels_onehot) {
  require_same("task_loss", pred_probs, labels_onehot);
  require_probability_rows("task_loss", pred_probs);
  return neg_batch_mean_dot(tape, labels_onehot, ad::clamped_log(tape, pred_probs, T(kProbFloor), T(1)));
}

template <typename T>
Tensor<T> reconstruction_loss(ad::Tape<T>& tape, const Tensor<T>& x_hat, const Tensor<T>& x) {
  require_same("reconstruction_loss", x_hat, x);
  return ad::mean(tape, ad::square(tape, ad::sub(tape, x_hat, x)));
}

template <typename T>
Tensor<T> conditional_entropy(ad::Tape<T>& tape, const Tensor<T>& cluster_probs) {
  require_probability_rows("conditional_entropy", cluster_probs);
  return neg_batch_mean_dot(tape, cluster_probs,
                            ad::clamped_log(tape, cluster_probs, T(kProbFloor), T(1)));
}

template <typename T>
Tensor<T> marginal_entropy_term(ad::Tape<T>& tape, const Tensor<T>& cluster_probs) {
  require_probability_rows("marginal_entropy_term", cluster_probs);
  const auto k = static_cast<T>(cluster_probs.dim(1));
  auto pbar = ad::mean_rows(tape, cluster_probs);
  auto log_ratio = ad::add_scalar(tape, ad::clamped_log(tape, pbar, T(kProbFloor), T(1)), std::log(k));
  return ad::sum(tape, ad::mul(tape, pbar, log_ratio));
}

template <typename T>
Tensor<T> consistency_penalty(ad::Tape<T>& tape, const Tensor<T>& clean_probs,
                              const Tensor<T>& aug_probs, bool block_clean_grad) {
  require_same("consistency_penalty", clean_probs, aug_probs);
  require_probability_rows("consistency_penalty", clean_probs);
  require_probability_rows("consistency_penalty", aug_probs);
  const Tensor<T> target = block_clean_grad ? ad::detach(clean_probs) : clean_probs;
  return neg_batch_mean_dot(tape, target, ad::clamped_log(tape, aug_probs, T(kProbFloor), T(1)));
}

template <typename T>
ClusterTerms<T> cluster_loss(ad::Tape<T>& tape, const Tensor<T>& clean_probs,
                             const Tensor<T>& aug_probs, double lambda, bool block_clean_grad) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("cluster_loss: lambda must be >= 0");
  ClusterTerms<T> t;
  t.consistency = consistency_penalty(tape, clean_probs, aug_probs, block_clean_grad);
  t.marginal_kl = marginal_entropy_term(tape, clean_probs);
  t.conditional_entropy = conditional_entropy(tape, clean_probs);
  const T l = static_cast<T>(lambda);
  t.total = ad::add(tape, t.consistency,
                    ad::scale(tape, ad::add(tape, t.marginal_kl, t.conditional_entropy), l));
  return t;
}

template <typename T>
Tensor<T> bootstrap_loss(ad::Tape<T>& tape, const Tensor<T>& log_pred,
                         const Tensor<T>& noisy_onehot, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("bootstrap_loss: alpha must lie in [0, 1], got " + std::to_string(alpha));
  require_same("bootstrap_loss", log_pred, noisy_onehot);
  const auto pseudo = argmax_one_hot(log_pred);
  auto ce_noisy = cross_entropy(tape, log_pred, noisy_onehot);
  auto ce_self = cross_entropy(tape, log_pred, pseudo);
  return ad::add(tape, ad::scale(tape, ce_noisy, static_cast<T>(alpha)),
                 ad::scale(tape, ce_self, static_cast<T>(1.0 - alpha)));
}

void LossSwitches::validate() const {
  if (!any_component() && !ce_baseline)
    throw std::invalid_argument(
        "all loss components are disabled (A, B and C off); enable one or request the "
        "cross-entropy baseline explicitly");
}

template <typename T>
TotalLoss<T> total_loss(ad::Tape<T>& tape, const LossTerms<T>& terms, const LossSwitches& switches) {
  switches.validate();
  if (!terms.classification.defined())
    throw std::invalid_argument("total_loss: classification term missing");
  TotalLoss<T> out;
  out.total = terms.classification;
  out.breakdown.bootstrap = static_cast<double>(terms.classification.item());
  if (switches.reconstruction) {
    if (!terms.reconstruction.defined()) throw std::invalid_argument("total_loss: reconstruction term missing");
    out.total = ad::add(tape, out.total, terms.reconstruction);
    out.breakdown.reconstruction = static_cast<double>(terms.reconstruction.item());
  }
  if (switches.cluster) {
    if (!terms.cluster.total.defined()) throw std::invalid_argument("total_loss: cluster term missing");
    out.total = ad::add(tape, out.total, terms.cluster.total);
    out.breakdown.cluster = static_cast<double>(terms.cluster.total.item());
    out.breakdown.cluster_consistency = static_cast<double>(terms.cluster.consistency.item());
    out.breakdown.cluster_marginal_kl = static_cast<double>(terms.cluster.marginal_kl.item());
    out.breakdown.cluster_conditional_entropy =
        static_cast<double>(terms.cluster.conditional_entropy.item());
  }
  out.breakdown.total = static_cast<double>(out.total.item());
  return out;
}

std::string to_string(AlphaKind kind) {
  switch (kind) {
    case AlphaKind::linear: return "linear";
    case AlphaKind::cosine: return "cosine";
    case AlphaKind::step: return "step";
  }
  return "?";
}

AlphaKind parse_alpha_kind(const std::string& s) {
  if (s == "linear") return AlphaKind::linear;
  if (s == "cosine") return AlphaKind::cosine;
  if (s == "step") return AlphaKind::step;
  throw std::invalid_argument("unknown alpha schedule '" + s + "' (expected linear|cosine|step)");
}

double alpha_at(const AlphaSchedule& schedule, double epoch, std::size_t total_epochs) {
  if (!(schedule.start_epoch < schedule.end_epoch))
    throw std::invalid_argument("alpha_at: start_epoch must be < end_epoch");
  if (!(epoch >= 0.0 && epoch <= static_cast<double>(total_epochs)))
    throw std::out_of_range("alpha_at: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(total_epochs) + "]");
  if (epoch <= schedule.start_epoch) return 1.0;
  if (epoch >= schedule.end_epoch) return 0.0;
  const double t = (epoch - schedule.start_epoch) / (schedule.end_epoch - schedule.start_epoch);
  switch (schedule.kind) {
    case AlphaKind::linear: return 1.0 - t;
    case AlphaKind::cosine: return 0.5 * (1.0 + std::cos(std::numbers::pi * t));
    case AlphaKind::step: return t < 0.5 ? 1.0 : 0.0;
  }
  return 0.0;
}

#define NLR_INSTANTIATE_LOSSES(T)                                                                 \
  template Tensor<T> one_hot<T>(std::span<const std::int32_t>, std::size_t);                      \
  template Tensor<T> argmax_one_hot(const Tensor<T>&);                                            \
  template Tensor<T> cross_entropy(ad::Tape<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> task_loss(ad::Tape<T>&, const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> reconstruction_loss(ad::Tape<T>&, const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> conditional_entropy(ad::Tape<T>&, const Tensor<T>&);                         \
  template Tensor<T> marginal_entropy_term(ad::Tape<T>&, const Tensor<T>&);                       \
  template Tensor<T> consistency_penalty(ad::Tape<T>&, const Tensor<T>&, const Tensor<T>&, bool); \
  template ClusterTerms<T> cluster_loss(ad::Tape<T>&, const Tensor<T>&, const Tensor<T>&, double, \
                                        bool);                                                    \
  template Tensor<T> bootstrap_loss(ad::Tape<T>&, const Tensor<T>&, const Tensor<T>&, double);    \
  template TotalLoss<T> total_loss(ad::Tape<T>&, const LossTerms<T>&, const LossSwitches&);

NLR_INSTANTIATE_LOSSES(float)
NLR_INSTANTIATE_LOSSES(double)

}  // namespace nlr::loss
