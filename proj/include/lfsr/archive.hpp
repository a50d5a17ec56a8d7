#pragma once

#include "lfsr/tensor.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <string>

namespace lfsr {

/// Versioned binary container of named double tensors plus JSON metadata.
///
/// Layout (little-endian):
///   8 bytes   magic "LFSRARC\0"
///   u32       format version (currently 1)
///   u64       byte length L of the JSON header
///   L bytes   JSON: {"meta": {...}, "tensors": [{"name", "shape": [n,c,h,w]}...]}
///   payload   float64 values of each tensor in header order
struct TensorArchive {
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Tensor<double>> tensors;

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

  const Tensor<double>& at(const std::string& name) const;
};

}  // namespace lfsr
