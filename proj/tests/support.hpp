// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "nlr/autodiff.hpp"
#include "nlr/rng.hpp"

namespace nlr::test {

inline std::vector<double> uniform_values(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  const auto n = numel(shape);
  return Tensor<double>::from_values(std::move(shape), uniform_values(n, rng, lo, hi));
}

/// Rows drawn from a softmax of random logits, so every entry is positive.
inline Tensor<double> random_probs(std::size_t rows, std::size_t k, Rng& rng, double spread = 2.0) {
  std::vector<double> v = uniform_values(rows * k, rng, -spread, spread);
  for (std::size_t i = 0; i < rows; ++i) {
    double z = 0;
    for (std::size_t j = 0; j < k; ++j) z += (v[i * k + j] = std::exp(v[i * k + j]));
    for (std::size_t j = 0; j < k; ++j) v[i * k + j] /= z;
  }
  return Tensor<double>::from_values({rows, k}, std::move(v));
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() / ("nlr-" + tag + "-" + std::to_string(stamp));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace nlr::test
