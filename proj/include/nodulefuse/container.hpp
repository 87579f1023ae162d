#pragma once

#include <filesystem>
#include <vector>

#include "nodulefuse/types.hpp"

namespace nf {

/// Portable on-disk dataset: a directory holding manifest.json (schema
/// version, per-record metadata, relative blob paths, CRC32 per blob) plus
/// one binary blob per record. Blob layout, little-endian:
///   magic "NFV1", u32 dims x3, f32 spacing x3,
///   f32 intensities (x-fastest), u8 mask bytes (x-fastest).
inline constexpr int kContainerSchemaVersion = 1;

/// Records must pass validate_record; throws DataError listing the first
/// offender otherwise. Overwrites an existing container at `dir`.
void save_container(const std::vector<NoduleRecord>& records, const std::filesystem::path& dir);

/// Bit-exact inverse of save_container. Throws DataError with distinct
/// messages for magic/version mismatch, truncation and checksum mismatch.
std::vector<NoduleRecord> load_container(const std::filesystem::path& dir);

} // namespace nf
