// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace nlr {

/// Operand shapes are incompatible with the requested operator.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An input lies outside the mathematical domain of an operator.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class DatasetFormatError : public std::runtime_error {
 public:
  enum class Kind { corrupt_header, shape_mismatch, version_mismatch, io };

  DatasetFormatError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Configuration failed validation. Carries every problem found, not only
/// the first one.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> issues);

  const std::vector<std::string>& issues() const noexcept { return issues_; }

 private:
  std::vector<std::string> issues_;
};

/// Training produced a non-finite or exploding loss / gradient.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A checkpoint was produced under a different configuration.
class HashMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace nlr
