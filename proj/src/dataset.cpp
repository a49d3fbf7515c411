// SPDX-License-Identifier: Apache-2.0
#include "nlr/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>
#include <numbers>

#include "nlr/error.hpp"
#include "nlr/rng.hpp"

namespace nlr {

void LabeledDataset::validate() const {
  const std::size_t n = clean_labels.size();
  if (num_classes < 2) throw std::invalid_argument("dataset: need at least 2 classes");
  if (input_shape.empty() || numel(input_shape) == 0)
    throw std::invalid_argument("dataset: empty input shape");
  if (noisy_labels.size() != n || corrupted.size() != n)
    throw std::invalid_argument("dataset: label arrays disagree in length");
  if (features.size() != n * numel(input_shape))
    throw std::invalid_argument("dataset: feature array does not match N x " +
                                to_string(input_shape));
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = clean_labels[i], y = noisy_labels[i];
    if (c < 0 || y < 0 || static_cast<std::size_t>(c) >= num_classes ||
        static_cast<std::size_t>(y) >= num_classes)
      throw std::invalid_argument("dataset: label out of range at sample " + std::to_string(i));
    if ((corrupted[i] != 0) != (c != y))
      throw std::invalid_argument("dataset: corrupted flag inconsistent at sample " +
                                  std::to_string(i));
  }
}

LabeledDataset LabeledDataset::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > size()) throw std::out_of_range("dataset slice out of range");
  LabeledDataset out;
  out.input_shape = input_shape;
  out.num_classes = num_classes;
  out.noise_applied = noise_applied;
  const auto d = sample_size();
  out.features.assign(features.begin() + static_cast<std::ptrdiff_t>(begin * d),
                      features.begin() + static_cast<std::ptrdiff_t>(end * d));
  auto cut = [&](const auto& v) {
    return std::remove_cvref_t<decltype(v)>(v.begin() + static_cast<std::ptrdiff_t>(begin),
                                            v.begin() + static_cast<std::ptrdiff_t>(end));
  };
  out.clean_labels = cut(clean_labels);
  out.noisy_labels = cut(noisy_labels);
  out.corrupted = cut(corrupted);
  return out;
}

namespace {

std::vector<double> class_mean(std::size_t k, std::size_t num_classes, std::size_t dims,
                               double separation) {
  std::vector<double> mu(dims, 0.0);
  if (dims >= num_classes) {
    mu[k] = separation;
  } else if (dims >= 2) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) /
                         static_cast<double>(num_classes);
    mu[0] = separation * std::cos(angle);
    mu[1] = separation * std::sin(angle);
  } else {
    mu[0] = separation *
            (2.0 * static_cast<double>(k) / static_cast<double>(num_classes - 1) - 1.0);
  }
  return mu;
}

/// Zero-mean, unit-RMS smooth pattern built from a few low-frequency cosines.
std::vector<double> smooth_basis(const Shape& shape, Rng& rng) {
  const std::size_t ch = shape[0], h = shape[1], w = shape[2];
  std::uniform_int_distribution<int> freq(0, 2);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> amp(0.0, 1.0);
  std::vector<double> img(ch * h * w, 0.0);
  for (std::size_t c = 0; c < ch; ++c)
    for (int term = 0; term < 3; ++term) {
      const double fy = freq(rng), fx = freq(rng), ph = phase(rng), a = amp(rng);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          img[(c * h + y) * w + x] +=
              a * std::cos(std::numbers::pi * (fy * static_cast<double>(y) / static_cast<double>(h) +
                                               fx * static_cast<double>(x) / static_cast<double>(w)) +
                           ph);
    }
  double m = 0;
  for (double v : img) m += v;
  m /= static_cast<double>(img.size());
  double rms = 0;
  for (double& v : img) {
    v -= m;
    rms += v * v;
  }
  rms = std::sqrt(rms / static_cast<double>(img.size()));
  if (rms > 0)
    for (double& v : img) v /= rms;
  return img;
}

}  // namespace

LabeledDataset generate_blobs(std::size_t num_samples, std::size_t num_classes,
                              const Shape& shape, double separation, std::uint64_t seed,
                              const BlobOptions& options) {
  if (num_classes < 2) throw std::invalid_argument("generate_blobs: need at least 2 classes");
  if (num_samples < num_classes)
    throw std::invalid_argument("generate_blobs: num_samples must be >= number of classes");
  if (!(separation >= 0.0) || !std::isfinite(separation))
    throw std::invalid_argument("generate_blobs: separation must be finite and >= 0");
  if (shape.empty() || shape.size() == 2 || shape.size() > 3 || numel(shape) == 0)
    throw std::invalid_argument("generate_blobs: shape must be {D} or {C, H, W}, got " +
                                to_string(shape));
  const bool image = shape.size() == 3;
  if (image && options.latent_dims == 0)
    throw std::invalid_argument("generate_blobs: latent_dims must be positive");

  Rng rng(seed);
  LabeledDataset ds;
  ds.input_shape = shape;
  ds.num_classes = num_classes;
  ds.clean_labels.resize(num_samples);
  for (std::size_t i = 0; i < num_samples; ++i)
    ds.clean_labels[i] = static_cast<std::int32_t>(i % num_classes);
  std::shuffle(ds.clean_labels.begin(), ds.clean_labels.end(), rng);
  ds.noisy_labels = ds.clean_labels;
  ds.corrupted.assign(num_samples, 0);

  const std::size_t latent = image ? options.latent_dims : shape[0];
  std::vector<std::vector<double>> means;
  for (std::size_t k = 0; k < num_classes; ++k)
    means.push_back(class_mean(k, num_classes, latent, separation));

  std::vector<std::vector<double>> basis;
  if (image)
    for (std::size_t j = 0; j < latent; ++j) basis.push_back(smooth_basis(shape, rng));

  const std::size_t d = numel(shape);
  const double latent_scale = 1.0 / std::sqrt(static_cast<double>(latent));
  std::normal_distribution<double> gauss(0.0, 1.0);
  ds.features.resize(num_samples * d);
  std::vector<double> z(latent);
  for (std::size_t i = 0; i < num_samples; ++i) {
    const auto& mu = means[static_cast<std::size_t>(ds.clean_labels[i])];
    for (std::size_t j = 0; j < latent; ++j) z[j] = mu[j] + gauss(rng);
    float* out = ds.features.data() + i * d;
    if (!image) {
      for (std::size_t j = 0; j < d; ++j) out[j] = static_cast<float>(z[j]);
      continue;
    }
    for (std::size_t p = 0; p < d; ++p) {
      double s = 0;
      for (std::size_t j = 0; j < latent; ++j) s += z[j] * basis[j][p];
      const double px = 1.0 / (1.0 + std::exp(-s * latent_scale)) + options.pixel_noise * gauss(rng);
      out[p] = static_cast<float>(std::clamp(px, 0.0, 1.0));
    }
  }
  return ds;
}

std::string to_string(NoiseKind kind) {
  return kind == NoiseKind::symmetric ? "symmetric" : "asymmetric";
}

NoiseKind parse_noise_kind(const std::string& s) {
  if (s == "symmetric") return NoiseKind::symmetric;
  if (s == "asymmetric") return NoiseKind::asymmetric;
  throw std::invalid_argument("unknown noise kind '" + s + "' (expected symmetric|asymmetric)");
}

LabeledDataset inject_noise(const LabeledDataset& ds, const NoiseSpec& spec) {
  if (ds.noise_applied) throw std::logic_error("inject_noise: dataset already carries injected noise");
  if (!(spec.epsilon >= 0.0 && spec.epsilon <= 1.0))
    throw std::invalid_argument("inject_noise: epsilon must lie in [0, 1]");
  if (spec.num_classes != ds.num_classes)
    throw std::invalid_argument("inject_noise: spec has " + std::to_string(spec.num_classes) +
                                " classes, dataset has " + std::to_string(ds.num_classes));
  if (spec.kind == NoiseKind::asymmetric && spec.epsilon > 0.5)
    std::cerr << "warning: asymmetric noise with epsilon " << spec.epsilon
              << " > 0.5 flips the majority of every class\n";

  LabeledDataset out = ds;
  out.noise_applied = true;
  const std::size_t C = ds.num_classes;
  std::vector<std::vector<std::size_t>> members(C);
  for (std::size_t i = 0; i < ds.size(); ++i)
    members[static_cast<std::size_t>(ds.clean_labels[i])].push_back(i);

  Rng rng(spec.seed);
  for (std::size_t k = 0; k < C; ++k) {
    auto& idx = members[k];
    if (spec.kind == NoiseKind::asymmetric && !spec.wrap_around && k + 1 == C) continue;
    const auto flips = static_cast<std::size_t>(
        std::llround(spec.epsilon * static_cast<double>(idx.size())));
    std::shuffle(idx.begin(), idx.end(), rng);
    std::uniform_int_distribution<std::size_t> other(0, C - 2);
    for (std::size_t v = 0; v < flips; ++v) {
      std::size_t target;
      if (spec.kind == NoiseKind::symmetric) {
        const std::size_t r = other(rng);
        target = r < k ? r : r + 1;
      } else {
        target = (k + 1) % C;
      }
      out.noisy_labels[idx[v]] = static_cast<std::int32_t>(target);
      out.corrupted[idx[v]] = 1;
    }
  }
  return out;
}

TransitionMatrix empirical_transition_matrix(const LabeledDataset& ds) {
  const std::size_t C = ds.num_classes;
  TransitionMatrix m;
  m.num_classes = C;
  m.p.assign(C * C, 0.0);
  m.counts.assign(C, 0);
  m.defined.assign(C, true);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto c = static_cast<std::size_t>(ds.clean_labels[i]);
    m.p[c * C + static_cast<std::size_t>(ds.noisy_labels[i])] += 1.0;
    ++m.counts[c];
  }
  for (std::size_t c = 0; c < C; ++c) {
    if (m.counts[c] == 0) {
      m.defined[c] = false;
      std::fill_n(m.p.begin() + static_cast<std::ptrdiff_t>(c * C), C,
                  std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    for (std::size_t j = 0; j < C; ++j) m.p[c * C + j] /= static_cast<double>(m.counts[c]);
  }
  return m;
}

void write_transition_csv(const TransitionMatrix& m, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "clean";
  for (std::size_t j = 0; j < m.num_classes; ++j) os << ",noisy_" << j;
  os << ",count\n";
  os.precision(17);
  for (std::size_t i = 0; i < m.num_classes; ++i) {
    os << i;
    for (std::size_t j = 0; j < m.num_classes; ++j) {
      os << ',';
      if (m.defined[i]) os << m.at(i, j);
      else os << "undefined";
    }
    os << ',' << m.counts[i] << '\n';
  }
}

namespace {

constexpr char kDatasetMagic[8] = {'N', 'L', 'R', 'D', 'S', 'E', 'T', '\0'};

template <typename U>
void put_le(std::ostream& os, U v) {
  using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t,
               std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint8_t>>;
  auto b = std::bit_cast<Bits>(v);
  for (std::size_t i = 0; i < sizeof(U); ++i) os.put(static_cast<char>((b >> (8 * i)) & 0xFF));
}

/// Reads little-endian values from a byte buffer, reporting underflow with
/// the caller-chosen error kind.
class LeReader {
 public:
  explicit LeReader(std::vector<char> buf) : buf_(std::move(buf)) {}

  template <typename U>
  U get(DatasetFormatError::Kind on_short, const char* what) {
    if (pos_ + sizeof(U) > buf_.size())
      throw DatasetFormatError(on_short, std::string("dataset: truncated while reading ") + what);
    using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t,
                 std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint8_t>>;
    Bits b = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      b |= static_cast<Bits>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return std::bit_cast<U>(b);
  }

  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path) {
  ds.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DatasetFormatError(DatasetFormatError::Kind::io, "cannot write " + path.string());
  os.write(kDatasetMagic, sizeof(kDatasetMagic));
  put_le(os, kDatasetFormatVersion);
  put_le(os, static_cast<std::uint32_t>(ds.num_classes));
  put_le(os, static_cast<std::uint64_t>(ds.size()));
  put_le(os, static_cast<std::uint32_t>(ds.input_shape.size()));
  for (auto d : ds.input_shape) put_le(os, static_cast<std::uint64_t>(d));
  put_le(os, static_cast<std::uint8_t>(ds.noise_applied ? 1 : 0));
  for (float f : ds.features) put_le(os, f);
  for (auto c : ds.clean_labels) put_le(os, c);
  for (auto y : ds.noisy_labels) put_le(os, y);
  for (auto b : ds.corrupted) put_le(os, b);
  if (!os) throw DatasetFormatError(DatasetFormatError::Kind::io, "write failed: " + path.string());
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  using Kind = DatasetFormatError::Kind;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DatasetFormatError(Kind::io, "cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kDatasetMagic) ||
      std::memcmp(buf.data(), kDatasetMagic, sizeof(kDatasetMagic)) != 0)
    throw DatasetFormatError(Kind::corrupt_header, "dataset: bad magic in " + path.string());
  LeReader r(std::vector<char>(buf.begin() + sizeof(kDatasetMagic), buf.end()));

  const auto version = r.get<std::uint32_t>(Kind::corrupt_header, "version");
  if (version != kDatasetFormatVersion)
    throw DatasetFormatError(Kind::version_mismatch,
                             "dataset: format version " + std::to_string(version) +
                                 ", this build reads " + std::to_string(kDatasetFormatVersion));
  LabeledDataset ds;
  ds.num_classes = r.get<std::uint32_t>(Kind::corrupt_header, "class count");
  const auto n = r.get<std::uint64_t>(Kind::corrupt_header, "sample count");
  const auto rank = r.get<std::uint32_t>(Kind::corrupt_header, "rank");
  if (rank == 0 || rank > 3) throw DatasetFormatError(Kind::corrupt_header, "dataset: bad rank");
  for (std::uint32_t i = 0; i < rank; ++i)
    ds.input_shape.push_back(r.get<std::uint64_t>(Kind::corrupt_header, "shape"));
  ds.noise_applied = r.get<std::uint8_t>(Kind::corrupt_header, "noise flag") != 0;

  const std::size_t d = numel(ds.input_shape);
  const std::size_t expected = n * (d * 4 + 4 + 4 + 1);
  if (d != 0 && r.remaining() < expected)
    throw DatasetFormatError(Kind::corrupt_header,
                             "dataset: truncated, header declares " + std::to_string(expected) +
                                 " payload bytes, file holds " + std::to_string(r.remaining()));
  if (d == 0 || r.remaining() != expected)
    throw DatasetFormatError(Kind::shape_mismatch,
                             "dataset: header declares " + std::to_string(n) + " x " +
                                 to_string(ds.input_shape) + " (" + std::to_string(expected) +
                                 " payload bytes), file holds " +
                                 std::to_string(r.remaining()));
  ds.features.resize(n * d);
  for (auto& f : ds.features) f = r.get<float>(Kind::shape_mismatch, "features");
  ds.clean_labels.resize(n);
  for (auto& c : ds.clean_labels) c = r.get<std::int32_t>(Kind::shape_mismatch, "labels");
  ds.noisy_labels.resize(n);
  for (auto& y : ds.noisy_labels) y = r.get<std::int32_t>(Kind::shape_mismatch, "labels");
  ds.corrupted.resize(n);
  for (auto& b : ds.corrupted) b = r.get<std::uint8_t>(Kind::shape_mismatch, "flags");
  try {
    ds.validate();
  } catch (const std::invalid_argument& e) {
    throw DatasetFormatError(Kind::shape_mismatch, e.what());
  }
  return ds;
}

void write_label_csv(const LabeledDataset& ds, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "index,clean_label,noisy_label,corrupted\n";
  for (std::size_t i = 0; i < ds.size(); ++i)
    os << i << ',' << ds.clean_labels[i] << ',' << ds.noisy_labels[i] << ','
       << static_cast<int>(ds.corrupted[i]) << '\n';
}

}  // namespace nlr
