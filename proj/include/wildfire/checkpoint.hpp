#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "wildfire/tensor.hpp"

namespace wildfire {

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// "PYC1" parameter checkpoint: magic, u32 version (1), u32 count, then per
/// tensor u32 name length, name bytes, u32 rank, u32 extents, f32 data.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

}  // namespace wildfire
