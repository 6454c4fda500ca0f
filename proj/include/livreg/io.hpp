#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "livreg/grid.hpp"

namespace livreg {

enum class DType { float32, uint8 };

std::string_view to_string(DType t) noexcept;
DType parse_dtype(std::string_view name);

// What a volume file declares about itself. `kind` is one of intensity,
// mask, displacement, velocity; components is 1 for volumes, 3 for fields.
struct VolumeHeader {
    Grid grid;
    DType dtype = DType::float32;
    int components = 1;
    std::string kind = "intensity";

    friend bool operator==(const VolumeHeader &, const VolumeHeader &) = default;
};

// Files ending in .nii use the single-file NIfTI-1 subset; files ending in
// .json are native sidecars with the payload in a .raw file next to them.
// Anything else is rejected.
VolumeHeader read_header(const std::filesystem::path &path);
Volume3 read_volume(const std::filesystem::path &path);
VectorField3 read_field(const std::filesystem::path &path);

// Masks whose values are all 0 or 1 default to uint8, everything else to float32.
void write_volume(const std::filesystem::path &path, const Volume3 &vol, std::optional<DType> dtype = std::nullopt);
void write_field(const std::filesystem::path &path, const VectorField3 &field);

// Raw bytes of the payload as stored on disk (the whole file for NIfTI after
// vox_offset, the .raw file for native volumes).
std::string read_payload_bytes(const std::filesystem::path &path);

std::string read_file(const std::filesystem::path &path);
void write_file(const std::filesystem::path &path, const std::string &bytes);

// 64-bit FNV-1a over the header file and, for native volumes, the payload; hex encoded.
std::string volume_digest(const std::filesystem::path &path);

} // namespace livreg
