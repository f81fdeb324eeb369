#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tags/volume.hpp"

namespace tags::io {

// Two on-disk volume formats are supported:
//  * NIfTI-1 single file (.nii, or gzip-compressed .nii.gz).
//  * Raw: a JSON header (.json) naming dims, spacing, origin, dtype and a
//    sibling file of little-endian scalars.
// The format is chosen from the file extension.

Volume read_volume(const std::filesystem::path& path);
/// Reads a label image; every non-zero voxel becomes 1.
MaskVolume read_mask(const std::filesystem::path& path);
void write_volume(const Volume& v, const std::filesystem::path& path);
void write_mask(const MaskVolume& m, const std::filesystem::path& path);

/// NIfTI from an in-memory buffer (plain or gzip).
Volume decode_nifti(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_nifti(const Volume& v);
std::vector<std::uint8_t> encode_nifti(const MaskVolume& m);
MaskVolume to_mask(const Volume& v);

std::vector<std::uint8_t> gzip_compress(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> gzip_decompress(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

struct CaseRecord {
    std::string id;
    std::filesystem::path image;
    std::filesystem::path organ;
    std::optional<std::filesystem::path> tumor;
    std::string organ_name = "kidney";
};

struct DatasetManifest {
    std::vector<CaseRecord> cases;
};

/// Reads `{"cases": [{"id", "image", "organ", "tumor", "organ_name"}, ...]}`.
/// Relative paths resolve against $TAGS_DATA_ROOT when set, else against the
/// manifest's directory.
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// $TAGS_DATA_ROOT, if set.
std::optional<std::filesystem::path> data_root();

}  // namespace tags::io
