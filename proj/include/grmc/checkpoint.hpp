#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "grmc/tensor.hpp"

namespace grmc::io {

/// Binary container: "GRCK" | u32 version | u64 manifest bytes | JSON manifest
/// | u32 tensor count | per tensor: u32 name bytes, name, GRND tensor.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json manifest;
  std::vector<std::pair<std::string, ad::Tensor>> tensors;

  const ad::Tensor& tensor(const std::string& name) const;
  bool operator==(const Checkpoint&) const = default;
};

std::string encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace grmc::io
