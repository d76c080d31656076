#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "mvfd/tensor.hpp"

namespace mvfd::ckpt {

/// Versioned binary container of named entries (strings, u64 scalars, f64
/// tensors). Payloads are little-endian; round-trips are bit-exact. Used for
/// model checkpoints and full training-state snapshots.
struct Container {
  std::map<std::string, std::string> strings;
  std::map<std::string, std::uint64_t> u64s;
  std::map<std::string, numerics::Tensor> tensors;

  void save(const std::filesystem::path& path) const;
  static Container load(const std::filesystem::path& path);

  const numerics::Tensor& tensor(const std::string& name) const;
  std::uint64_t u64(const std::string& name) const;
  const std::string& str(const std::string& name) const;
};

}  // namespace mvfd::ckpt
