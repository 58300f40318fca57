#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "bido/optim.hpp"

namespace bido {

inline constexpr std::uint16_t kCheckpointVersion = 1;

// Layout, all little-endian:
//   "BIDO" | u16 version | u32 tensor count |
//   per tensor: u32 name length, UTF-8 name, u32 rank, u64 extents[rank],
//               f64 values[product(extents)]
std::vector<std::uint8_t> serialize_checkpoint(std::span<const NamedParam> tensors);
std::vector<NamedParam> deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, std::span<const NamedParam> tensors);
std::vector<NamedParam> load_checkpoint(const std::filesystem::path& path);

}  // namespace bido
