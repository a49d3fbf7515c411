// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numeric>

#include "nlr/dataset.hpp"
#include "support.hpp"

using namespace nlr;

namespace {

// Nearest-class-mean probe: fit on the first half with clean labels, score
// the second half. A linear classifier written without any project code.
double linear_probe_accuracy(const LabeledDataset& ds) {
  const std::size_t n = ds.size(), half = n / 2, d = ds.sample_size(), C = ds.num_classes;
  std::vector<double> mu(C * d, 0.0);
  std::vector<std::size_t> count(C, 0);
  for (std::size_t i = 0; i < half; ++i) {
    const auto y = static_cast<std::size_t>(ds.clean_labels[i]);
    ++count[y];
    for (std::size_t j = 0; j < d; ++j) mu[y * d + j] += ds.features[i * d + j];
  }
  for (std::size_t k = 0; k < C; ++k)
    for (std::size_t j = 0; j < d; ++j) mu[k * d + j] /= static_cast<double>(std::max<std::size_t>(count[k], 1));
  std::size_t hit = 0;
  for (std::size_t i = half; i < n; ++i) {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t k = 0; k < C; ++k) {
      double s = 0;
      for (std::size_t j = 0; j < d; ++j) {
        const double e = ds.features[i * d + j] - mu[k * d + j];
        s += e * e;
      }
      if (s < best_d) best_d = s, best = k;
    }
    hit += best == static_cast<std::size_t>(ds.clean_labels[i]);
  }
  return static_cast<double>(hit) / static_cast<double>(n - half);
}

NoiseSpec spec_of(NoiseKind kind, double eps, std::size_t C, std::uint64_t seed) {
  NoiseSpec s;
  s.kind = kind;
  s.epsilon = eps;
  s.num_classes = C;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("separated blobs are linearly separable") {
  const auto ds = generate_blobs(1000, 4, {2}, 4.0, 7);
  CHECK(ds.size() == 1000);
  CHECK(linear_probe_accuracy(ds) >= 0.95);
}

TEST_CASE("zero separation leaves classes indistinguishable") {
  const auto ds = generate_blobs(4000, 4, {2}, 0.0, 7);
  CHECK(std::abs(linear_probe_accuracy(ds) - 0.25) <= 0.05);
}

TEST_CASE("image blobs are normalized and separable") {
  const auto ds = generate_blobs(1000, 4, {1, 12, 12}, 3.0, 3);
  CHECK(ds.is_image());
  for (float v : ds.features) {
    REQUIRE(v >= 0.0f);
    REQUIRE(v <= 1.0f);
  }
  CHECK(linear_probe_accuracy(ds) >= 0.8);
}

TEST_CASE("generation is deterministic in the seed") {
  CHECK(generate_blobs(300, 3, {1, 8, 8}, 3.0, 5) == generate_blobs(300, 3, {1, 8, 8}, 3.0, 5));
  CHECK_FALSE(generate_blobs(300, 3, {4}, 3.0, 5) == generate_blobs(300, 3, {4}, 3.0, 6));
}

TEST_CASE("generation rejects bad arguments") {
  CHECK_THROWS_AS(generate_blobs(3, 4, {2}, 1.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(generate_blobs(100, 1, {2}, 1.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(generate_blobs(100, 4, {2, 2}, 1.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(generate_blobs(100, 4, {2}, -1.0, 1), std::invalid_argument);
}

TEST_CASE("symmetric noise transition matrix") {
  const auto ds = generate_blobs(100000, 10, {4}, 3.0, 1);
  const auto noisy = inject_noise(ds, spec_of(NoiseKind::symmetric, 0.2, 10, 4));
  const auto tm = empirical_transition_matrix(noisy);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 10; ++j) {
      if (i == j) CHECK(tm.at(i, j) == doctest::Approx(0.8).epsilon(1e-12));
      else CHECK(std::abs(tm.at(i, j) - 0.2 / 9) <= 0.01);
    }
}

TEST_CASE("symmetric noise flips an exact count per class") {
  const auto ds = generate_blobs(1003, 4, {3}, 3.0, 2);
  const auto noisy = inject_noise(ds, spec_of(NoiseKind::symmetric, 0.37, 4, 9));
  std::vector<std::size_t> n(4, 0), flipped(4, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    ++n[ds.clean_labels[i]];
    flipped[ds.clean_labels[i]] += noisy.corrupted[i];
  }
  for (std::size_t k = 0; k < 4; ++k)
    CHECK(flipped[k] == static_cast<std::size_t>(std::llround(0.37 * static_cast<double>(n[k]))));
  CHECK(noisy.features == ds.features);
  CHECK(noisy.clean_labels == ds.clean_labels);
  for (std::size_t i = 0; i < ds.size(); ++i)
    REQUIRE(static_cast<bool>(noisy.corrupted[i]) == (noisy.noisy_labels[i] != noisy.clean_labels[i]));
}

TEST_CASE("zero epsilon leaves labels clean") {
  const auto ds = generate_blobs(200, 4, {2}, 3.0, 2);
  const auto noisy = inject_noise(ds, spec_of(NoiseKind::symmetric, 0.0, 4, 1));
  CHECK(noisy.noisy_labels == ds.clean_labels);
  CHECK(std::accumulate(noisy.corrupted.begin(), noisy.corrupted.end(), 0) == 0);
}

TEST_CASE("asymmetric noise moves mass to the next class only") {
  const auto ds = generate_blobs(100000, 10, {2}, 3.0, 8);
  const auto noisy = inject_noise(ds, spec_of(NoiseKind::asymmetric, 0.3, 10, 8));
  const auto tm = empirical_transition_matrix(noisy);
  CHECK(std::abs(tm.at(0, 1) - 0.3) <= 0.01);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 10; ++j) {
      if (j == i) CHECK(std::abs(tm.at(i, j) - 0.7) <= 0.01);
      else if (j == (i + 1) % 10) CHECK(std::abs(tm.at(i, j) - 0.3) <= 0.01);
      else CHECK(tm.at(i, j) == 0.0);
    }
}

TEST_CASE("asymmetric noise without wrap-around spares the last class") {
  const auto ds = generate_blobs(4000, 4, {2}, 3.0, 8);
  auto spec = spec_of(NoiseKind::asymmetric, 0.4, 4, 8);
  spec.wrap_around = false;
  const auto tm = empirical_transition_matrix(inject_noise(ds, spec));
  CHECK(tm.at(3, 3) == 1.0);
  CHECK(std::abs(tm.at(2, 3) - 0.4) <= 0.02);
}

TEST_CASE("empirical transition matrix examples") {
  const auto ds = generate_blobs(40000, 4, {2}, 3.0, 6);
  const auto identity = empirical_transition_matrix(ds);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(identity.at(i, j) == (i == j ? 1.0 : 0.0));

  const auto sym = empirical_transition_matrix(inject_noise(ds, spec_of(NoiseKind::symmetric, 0.4, 4, 6)));
  const auto asym = empirical_transition_matrix(inject_noise(ds, spec_of(NoiseKind::asymmetric, 0.4, 4, 6)));
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(std::abs(sym.at(k, k) - 0.6) <= 0.02);
    CHECK(std::abs(asym.at(k, (k + 1) % 4) - 0.4) <= 0.02);
    double row = 0;
    for (std::size_t j = 0; j < 4; ++j) row += sym.at(k, j);
    CHECK(std::abs(row - 1.0) <= 1e-9);
  }
}

TEST_CASE("empty class gives an undefined row") {
  auto ds = generate_blobs(40, 4, {2}, 3.0, 6);
  for (auto& y : ds.clean_labels)
    if (y == 2) y = 1;
  ds.noisy_labels = ds.clean_labels;
  const auto tm = empirical_transition_matrix(ds);
  CHECK_FALSE(tm.defined[2]);
  CHECK(std::isnan(tm.at(2, 2)));
  CHECK(tm.defined[1]);
}

TEST_CASE("double injection is rejected") {
  const auto ds = generate_blobs(100, 4, {2}, 3.0, 2);
  const auto noisy = inject_noise(ds, spec_of(NoiseKind::symmetric, 0.2, 4, 1));
  CHECK_THROWS_AS(inject_noise(noisy, spec_of(NoiseKind::symmetric, 0.2, 4, 1)), std::logic_error);
  CHECK_THROWS_AS(inject_noise(ds, spec_of(NoiseKind::symmetric, 1.5, 4, 1)), std::invalid_argument);
}

TEST_CASE("noise injection is deterministic in the seed") {
  const auto ds = generate_blobs(500, 4, {2}, 3.0, 2);
  const auto a = inject_noise(ds, spec_of(NoiseKind::symmetric, 0.5, 4, 17));
  const auto b = inject_noise(ds, spec_of(NoiseKind::symmetric, 0.5, 4, 17));
  const auto c = inject_noise(ds, spec_of(NoiseKind::symmetric, 0.5, 4, 18));
  CHECK(a == b);
  CHECK_FALSE(a.noisy_labels == c.noisy_labels);
}

TEST_CASE("dataset file round trip and errors") {
  test::TempDir dir("dataset");
  const auto ds = inject_noise(generate_blobs(120, 3, {1, 6, 6}, 3.0, 2), spec_of(NoiseKind::symmetric, 0.3, 3, 1));
  const auto path = dir / "ds.bin";
  save_dataset(ds, path);
  CHECK(load_dataset(path) == ds);

  std::ifstream in(path, std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto write = [&](const std::vector<char>& b) {
    std::ofstream out(dir / "bad.bin", std::ios::binary);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
  };
  auto kind_of = [&]() {
    try {
      load_dataset(dir / "bad.bin");
    } catch (const DatasetFormatError& e) {
      return static_cast<int>(e.kind());
    }
    return -1;
  };

  write(std::vector<char>(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(bytes.size() / 2)));
  CHECK(kind_of() == static_cast<int>(DatasetFormatError::Kind::corrupt_header));
  write(std::vector<char>(bytes.begin(), bytes.begin() + 10));
  CHECK(kind_of() == static_cast<int>(DatasetFormatError::Kind::corrupt_header));

  auto bumped = bytes;
  bumped[8] = static_cast<char>(bumped[8] + 1);
  write(bumped);
  CHECK(kind_of() == static_cast<int>(DatasetFormatError::Kind::version_mismatch));

  auto padded = bytes;
  padded.push_back(0);
  write(padded);
  CHECK(kind_of() == static_cast<int>(DatasetFormatError::Kind::shape_mismatch));

  CHECK_THROWS_AS(load_dataset(dir / "missing.bin"), DatasetFormatError);
}
