#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "fmtk/core.hpp"

// Component checkpoint format, all integers little-endian:
//
//   "FMTK"                 4 bytes magic
//   version                u16 (currently 1)
//   kind                   u8  (0 encoder, 1 backbone, 2 adapter, 3 decoder)
//   name                   u32 byte length + UTF-8 bytes
//   config                 u32 byte length + canonical JSON (sorted keys)
//                          {"config": {...}, "frozen": bool, "type": "..."}
//   parameter count        u32
//   per parameter:
//     path                 u32 byte length + UTF-8 bytes
//     dtype                u8  (1 = f64, 2 = f32)
//     rank                 u8
//     dims                 u64 each
//     data                 raw little-endian scalars, row-major
//   crc32                  u32 over every preceding byte
namespace fmtk {

inline constexpr std::uint16_t kCheckpointVersion = 1;

enum class StoragePrecision : std::uint8_t { F64 = 1, F32 = 2 };

std::vector<std::uint8_t> encode_component(Component& component,
                                           StoragePrecision precision = StoragePrecision::F64);

// Verifies the checksum before building anything, so a corrupted buffer never
// yields a partially restored component.
std::shared_ptr<Component> decode_component(std::span<const std::uint8_t> bytes);

void save_component(Component& component, const std::filesystem::path& path,
                    StoragePrecision precision = StoragePrecision::F64);
std::shared_ptr<Component> load_component(const std::filesystem::path& path);
// Throws FormatError when the stored kind differs from `expected`.
std::shared_ptr<Component> load_component(const std::filesystem::path& path, ComponentKind expected);

}  // namespace fmtk
