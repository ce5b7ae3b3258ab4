#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cnx/model.hpp"

namespace cnx {

// .cxm layout (all integers little-endian):
//   "CXM1" | u32 format version | u64 header length | header JSON | payload
// The header carries the graph, metadata, parameter list (name, dtype, shape,
// and scale/zero_point for int8) and an FNV-1a 64 checksum of the payload.
// The payload is every parameter's raw bytes in declaration order: 4 bytes per
// float32 element, 1 byte per int8 element.
inline constexpr std::uint32_t kCxmVersion = 1;

std::vector<std::uint8_t> serialize(const Model& model);
Model deserialize(std::span<const std::uint8_t> bytes);

void save(const Model& model, const std::filesystem::path& path);
Model load(const std::filesystem::path& path);

// Exact length of serialize(model) without materializing the payload.
std::uint64_t serialized_size(const Model& model);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

}  // namespace cnx
