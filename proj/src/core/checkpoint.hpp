#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nn/tensor.hpp"

namespace miscal {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

inline std::uint64_t fnv1a64(const void* data, std::size_t size,
                             std::uint64_t hash = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= p[i];
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

/// Single-file archive: text JSON header (metadata + tensor table) followed
/// by raw little-endian float32 tensor data.
struct Checkpoint {
  nlohmann::json meta;
  std::vector<std::pair<std::string, nn::Tensor>> tensors;

  const nn::Tensor* find(const std::string& name) const;
};

/// Writes to a temp file in the same directory, then renames into place.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace miscal
