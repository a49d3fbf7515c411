// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "nlr/models.hpp"

namespace nlr {

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;

  bool operator==(const NamedArray&) const = default;
};

/// Named parameter tensors, free-form scalar metadata, and the hash of the
/// configuration that produced them.
///
/// Little-endian layout:
///   "NLRCKPT\0" | u32 version | u64 config_hash
///   | u32 n_arrays | { u32 name_len | name | u32 rank | u64 dims | f32 values }*
///   | u32 n_meta   | { u32 name_len | name | f64 value }*
struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::vector<NamedArray> arrays;
  std::map<std::string, double> meta;

  const NamedArray* find(const std::string& name) const;
  bool operator==(const Checkpoint&) const = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename T>
std::vector<NamedArray> export_parameters(const ParameterList<T>& params, const std::string& prefix = "");

/// Copies matching arrays into the parameters. Throws if a parameter is
/// missing or its shape differs.
template <typename T>
void import_parameters(const Checkpoint& ckpt, const ParameterList<T>& params,
                       const std::string& prefix = "");

}  // namespace nlr
