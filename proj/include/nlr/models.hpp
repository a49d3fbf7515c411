// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nlr/autodiff.hpp"
#include "nlr/rng.hpp"

namespace nlr {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParameterList = std::vector<Parameter<T>>;

/// y = x W + b with W stored [in, out]. Weights and bias start uniform in
/// ±1/sqrt(fan_in).
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, std::string name);

  Tensor<T> forward(ad::Tape<T>& tape, const Tensor<T>& x) const;
  void collect(ParameterList<T>& out) const;

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  std::string name;
  Tensor<T> weight;
  Tensor<T> bias;
};

/// Square-kernel 2-d convolution or its transpose.
template <typename T>
class Conv {
 public:
  Conv() = default;
  Conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
       ad::Conv2dAttrs attrs, bool transposed, Rng& rng, std::string name);

  Tensor<T> forward(ad::Tape<T>& tape, const Tensor<T>& x) const;
  void collect(ParameterList<T>& out) const;

  std::string name;
  Tensor<T> weight;
  Tensor<T> bias;
  ad::Conv2dAttrs attrs;
  bool transposed = false;
};

enum class BackboneKind { mlp, conv };

std::string to_string(BackboneKind kind);
BackboneKind parse_backbone_kind(const std::string& s);

struct ModelSpec {
  BackboneKind backbone = BackboneKind::mlp;
  Shape input_shape;                     // per sample
  std::vector<std::size_t> hidden{256, 128};  // mlp widths
  std::vector<std::size_t> channels{8, 16, 32};  // conv blocks
  std::size_t feature_dim = 64;
  std::size_t num_classes = 2;
  std::size_t num_clusters = 2;
};

/// f_theta: inputs (B, ...input_shape) -> non-negative features (B, d).
/// mlp: flatten, hidden layers with ReLU, final linear + ReLU.
/// conv: per block 3x3 conv + ReLU (+ 2x2 max-pool while the map is even),
/// then flatten, linear + ReLU.
template <typename T>
class Backbone {
 public:
  Backbone() = default;
  Backbone(const ModelSpec& spec, Rng& rng);

  Tensor<T> encode(ad::Tape<T>& tape, const Tensor<T>& x) const;
  void collect(ParameterList<T>& out) const;

  Linear<T>& final_layer() { return head_; }
  std::size_t feature_dim() const { return head_.out_features(); }

 private:
  ModelSpec spec_;
  std::vector<Linear<T>> mlp_;
  std::vector<Conv<T>> convs_;
  std::vector<bool> pooled_;
  Shape conv_out_;  // {C, H, W} after the last block
  Linear<T> head_;
};

/// Linear map from features to K logits, softmax for probabilities. Serves
/// as both the classifier head g_phi (K = classes) and the cluster head g_xi
/// (K = clusters).
template <typename T>
class SoftmaxHead {
 public:
  SoftmaxHead() = default;
  SoftmaxHead(std::size_t feature_dim, std::size_t outputs, Rng& rng, std::string name);

  Tensor<T> logits(ad::Tape<T>& tape, const Tensor<T>& features) const;
  Tensor<T> probabilities(ad::Tape<T>& tape, const Tensor<T>& features) const;
  Tensor<T> log_probabilities(ad::Tape<T>& tape, const Tensor<T>& features) const;
  void collect(ParameterList<T>& out) const { linear.collect(out); }

  Linear<T> linear;
};

template <typename T>
using ClassifierHead = SoftmaxHead<T>;
template <typename T>
using ClusterHead = SoftmaxHead<T>;

/// D_psi: features (B, d) -> reconstruction (B, ...input_shape) in [0, 1].
/// Mirrors the backbone; the output activation is a sigmoid.
template <typename T>
class DecoderNet {
 public:
  DecoderNet() = default;
  DecoderNet(const ModelSpec& spec, Rng& rng);

  Tensor<T> decode(ad::Tape<T>& tape, const Tensor<T>& features) const;
  void collect(ParameterList<T>& out) const;

 private:
  ModelSpec spec_;
  std::vector<Linear<T>> mlp_;
  Linear<T> stem_;  // conv: features -> first feature map
  Shape stem_shape_;
  std::vector<Conv<T>> deconvs_;
};

/// The four trainable functions, initialized deterministically from one seed.
template <typename T>
struct ModelSet {
  ModelSet() = default;
  ModelSet(const ModelSpec& spec, std::uint64_t seed);

  /// Every parameter, in a fixed order, named "<module>.<layer>.<weight|bias>".
  ParameterList<T> parameters() const;

  ModelSpec spec;
  Backbone<T> backbone;
  ClassifierHead<T> classifier;
  ClusterHead<T> cluster;
  DecoderNet<T> decoder;
};

/// Prepends the batch extent to a per-sample shape.
Shape batch_shape(std::size_t batch, const Shape& sample);

}  // namespace nlr
