// SPDX-License-Identifier: Apache-2.0
#include "nlr/models.hpp"

#include <cmath>

namespace nlr {

Shape batch_shape(std::size_t batch, const Shape& sample) {
  Shape s{batch};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

namespace {

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(u(rng));
  return Tensor<T>::from_values(std::move(shape), std::move(v), true);
}

struct ConvPlan {
  std::vector<bool> pooled;
  Shape out;  // {C, H, W}
};

ConvPlan plan_convs(const ModelSpec& spec) {
  ConvPlan plan;
  std::size_t h = spec.input_shape[1], w = spec.input_shape[2];
  for (std::size_t c : spec.channels) {
    const bool pool = h % 2 == 0 && w % 2 == 0 && h >= 2 && w >= 2;
    plan.pooled.push_back(pool);
    if (pool) {
      h /= 2;
      w /= 2;
    }
    plan.out = {c, h, w};
  }
  return plan;
}

void check_spec(const ModelSpec& spec) {
  if (spec.feature_dim == 0 || spec.num_classes < 2 || spec.num_clusters < 2)
    throw std::invalid_argument("model: feature_dim, classes and clusters must be positive (>= 2 outputs)");
  if (spec.input_shape.empty() || numel(spec.input_shape) == 0)
    throw std::invalid_argument("model: empty input shape");
  if (spec.backbone == BackboneKind::conv) {
    if (spec.input_shape.size() != 3)
      throw ShapeError("model: conv backbone needs {C, H, W} inputs, got " +
                       to_string(spec.input_shape));
    if (spec.channels.empty()) throw std::invalid_argument("model: conv backbone needs channels");
  }
}

void check_input(const Shape& x, const Shape& sample, const char* who) {
  if (x.size() != sample.size() + 1 || !std::equal(sample.begin(), sample.end(), x.begin() + 1))
    throw ShapeError(std::string(who) + ": expected (batch, " + to_string(sample).substr(1) +
                     " input, got " + to_string(x));
}

}  // namespace

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, Rng& rng, std::string name_)
    : name(std::move(name_)) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = uniform_tensor<T>({in, out}, bound, rng);
  bias = uniform_tensor<T>({out}, bound, rng);
}

template <typename T>
Tensor<T> Linear<T>::forward(ad::Tape<T>& tape, const Tensor<T>& x) const {
  return ad::add_row(tape, ad::matmul(tape, x, weight), bias);
}

template <typename T>
void Linear<T>::collect(ParameterList<T>& out) const {
  out.push_back({name + ".weight", weight});
  out.push_back({name + ".bias", bias});
}

template <typename T>
Conv<T>::Conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
              ad::Conv2dAttrs attrs_, bool transposed_, Rng& rng, std::string name_)
    : name(std::move(name_)), attrs(attrs_), transposed(transposed_) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels * kernel * kernel));
  weight = transposed ? uniform_tensor<T>({in_channels, out_channels, kernel, kernel}, bound, rng)
                      : uniform_tensor<T>({out_channels, in_channels, kernel, kernel}, bound, rng);
  bias = uniform_tensor<T>({out_channels}, bound, rng);
}

template <typename T>
Tensor<T> Conv<T>::forward(ad::Tape<T>& tape, const Tensor<T>& x) const {
  return transposed ? ad::conv_transpose2d(tape, x, weight, bias, attrs)
                    : ad::conv2d(tape, x, weight, bias, attrs);
}

template <typename T>
void Conv<T>::collect(ParameterList<T>& out) const {
  out.push_back({name + ".weight", weight});
  out.push_back({name + ".bias", bias});
}

std::string to_string(BackboneKind kind) { return kind == BackboneKind::mlp ? "mlp" : "conv"; }

BackboneKind parse_backbone_kind(const std::string& s) {
  if (s == "mlp") return BackboneKind::mlp;
  if (s == "conv") return BackboneKind::conv;
  throw std::invalid_argument("unknown backbone '" + s + "' (expected mlp|conv)");
}

template <typename T>
Backbone<T>::Backbone(const ModelSpec& spec, Rng& rng) : spec_(spec) {
  check_spec(spec);
  if (spec.backbone == BackboneKind::mlp) {
    std::size_t in = numel(spec.input_shape);
    for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
      mlp_.emplace_back(in, spec.hidden[i], rng, "backbone.fc" + std::to_string(i));
      in = spec.hidden[i];
    }
    head_ = Linear<T>(in, spec.feature_dim, rng, "backbone.out");
    return;
  }
  const auto plan = plan_convs(spec);
  pooled_ = plan.pooled;
  conv_out_ = plan.out;
  std::size_t in = spec.input_shape[0];
  for (std::size_t i = 0; i < spec.channels.size(); ++i) {
    convs_.emplace_back(in, spec.channels[i], 3, ad::Conv2dAttrs{1, 1}, false, rng,
                        "backbone.conv" + std::to_string(i));
    in = spec.channels[i];
  }
  head_ = Linear<T>(numel(conv_out_), spec.feature_dim, rng, "backbone.out");
}

template <typename T>
Tensor<T> Backbone<T>::encode(ad::Tape<T>& tape, const Tensor<T>& x) const {
  check_input(x.shape(), spec_.input_shape, "encode");
  const std::size_t batch = x.dim(0);
  Tensor<T> h;
  if (spec_.backbone == BackboneKind::mlp) {
    h = ad::reshape(tape, x, {batch, numel(spec_.input_shape)});
    for (const auto& layer : mlp_) h = ad::relu(tape, layer.forward(tape, h));
  } else {
    h = x;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      h = ad::relu(tape, convs_[i].forward(tape, h));
      if (pooled_[i]) h = ad::max_pool2d(tape, h, 2);
    }
    h = ad::reshape(tape, h, {batch, numel(conv_out_)});
  }
  return ad::relu(tape, head_.forward(tape, h));
}

template <typename T>
void Backbone<T>::collect(ParameterList<T>& out) const {
  for (const auto& l : mlp_) l.collect(out);
  for (const auto& c : convs_) c.collect(out);
  head_.collect(out);
}

template <typename T>
SoftmaxHead<T>::SoftmaxHead(std::size_t feature_dim, std::size_t outputs, Rng& rng,
                            std::string name)
    : linear(feature_dim, outputs, rng, std::move(name)) {}

template <typename T>
Tensor<T> SoftmaxHead<T>::logits(ad::Tape<T>& tape, const Tensor<T>& features) const {
  if (features.rank() != 2 || features.dim(1) != linear.in_features())
    throw ShapeError(linear.name + ": expected (batch, " + std::to_string(linear.in_features()) +
                     ") features, got " + to_string(features.shape()));
  return linear.forward(tape, features);
}

template <typename T>
Tensor<T> SoftmaxHead<T>::probabilities(ad::Tape<T>& tape, const Tensor<T>& features) const {
  return ad::softmax(tape, logits(tape, features));
}

template <typename T>
Tensor<T> SoftmaxHead<T>::log_probabilities(ad::Tape<T>& tape, const Tensor<T>& features) const {
  return ad::log_softmax(tape, logits(tape, features));
}

template <typename T>
DecoderNet<T>::DecoderNet(const ModelSpec& spec, Rng& rng) : spec_(spec) {
  check_spec(spec);
  if (spec.backbone == BackboneKind::mlp) {
    std::size_t in = spec.feature_dim;
    for (std::size_t i = spec.hidden.size(); i-- > 0;) {
      mlp_.emplace_back(in, spec.hidden[i], rng, "decoder.fc" + std::to_string(mlp_.size()));
      in = spec.hidden[i];
    }
    mlp_.emplace_back(in, numel(spec.input_shape), rng, "decoder.out");
    return;
  }
  const auto plan = plan_convs(spec);
  stem_shape_ = plan.out;
  stem_ = Linear<T>(spec.feature_dim, numel(plan.out), rng, "decoder.stem");
  for (std::size_t i = spec.channels.size(); i-- > 0;) {
    const std::size_t out_c = i > 0 ? spec.channels[i - 1] : spec.input_shape[0];
    const std::string name = "decoder.deconv" + std::to_string(deconvs_.size());
    if (plan.pooled[i])
      deconvs_.emplace_back(spec.channels[i], out_c, 2, ad::Conv2dAttrs{2, 0}, true, rng, name);
    else
      deconvs_.emplace_back(spec.channels[i], out_c, 3, ad::Conv2dAttrs{1, 1}, true, rng, name);
  }
}

template <typename T>
Tensor<T> DecoderNet<T>::decode(ad::Tape<T>& tape, const Tensor<T>& features) const {
  if (features.rank() != 2 || features.dim(1) != spec_.feature_dim)
    throw ShapeError("decode: expected (batch, " + std::to_string(spec_.feature_dim) +
                     ") features, got " + to_string(features.shape()));
  const std::size_t batch = features.dim(0);
  Tensor<T> h = features;
  if (spec_.backbone == BackboneKind::mlp) {
    for (std::size_t i = 0; i + 1 < mlp_.size(); ++i) h = ad::relu(tape, mlp_[i].forward(tape, h));
    h = ad::sigmoid(tape, mlp_.back().forward(tape, h));
    return ad::reshape(tape, h, batch_shape(batch, spec_.input_shape));
  }
  h = ad::relu(tape, stem_.forward(tape, h));
  h = ad::reshape(tape, h, batch_shape(batch, stem_shape_));
  for (std::size_t i = 0; i < deconvs_.size(); ++i) {
    h = deconvs_[i].forward(tape, h);
    h = i + 1 < deconvs_.size() ? ad::relu(tape, h) : ad::sigmoid(tape, h);
  }
  return h;
}

template <typename T>
void DecoderNet<T>::collect(ParameterList<T>& out) const {
  for (const auto& l : mlp_) l.collect(out);
  if (spec_.backbone == BackboneKind::conv) stem_.collect(out);
  for (const auto& c : deconvs_) c.collect(out);
}

template <typename T>
ModelSet<T>::ModelSet(const ModelSpec& spec_, std::uint64_t seed) : spec(spec_) {
  // Independent streams so enabling one module never shifts another's init.
  Rng r_backbone(derive_seed({seed, 1})), r_cls(derive_seed({seed, 2})),
      r_cluster(derive_seed({seed, 3})), r_dec(derive_seed({seed, 4}));
  backbone = Backbone<T>(spec, r_backbone);
  classifier = ClassifierHead<T>(spec.feature_dim, spec.num_classes, r_cls, "classifier");
  cluster = ClusterHead<T>(spec.feature_dim, spec.num_clusters, r_cluster, "cluster");
  decoder = DecoderNet<T>(spec, r_dec);
}

template <typename T>
ParameterList<T> ModelSet<T>::parameters() const {
  ParameterList<T> out;
  backbone.collect(out);
  classifier.collect(out);
  cluster.collect(out);
  decoder.collect(out);
  return out;
}

template class Linear<float>;
template class Linear<double>;
template class Conv<float>;
template class Conv<double>;
template class Backbone<float>;
template class Backbone<double>;
template class SoftmaxHead<float>;
template class SoftmaxHead<double>;
template class DecoderNet<float>;
template class DecoderNet<double>;
template struct ModelSet<float>;
template struct ModelSet<double>;

}  // namespace nlr
