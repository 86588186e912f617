#pragma once

#include "geolat/geometry.hpp"
#include "geolat/image.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace geolat {

using Json = nlohmann::json;

Json read_json(const std::filesystem::path& path);
/// Writes with sorted keys and two-space indentation, so equal values give equal bytes.
void write_json(const std::filesystem::path& path, const Json& value);

/// 8-bit PNG with 1 or 3 channels; values are clamped to [0, 1] and rounded.
void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

/// Raw little-endian array with a JSON sidecar (`<stem>.json`) giving dtype and shape.
struct Blob {
    std::string dtype;  // "float32" or "uint8"
    std::vector<std::int64_t> shape;
    std::vector<float> f32;
    std::vector<std::uint8_t> u8;

    std::int64_t numel() const;
};

void write_blob(const std::filesystem::path& path, std::span<const float> data, const std::vector<std::int64_t>& shape);
void write_blob(const std::filesystem::path& path, std::span<const std::uint8_t> data,
                const std::vector<std::int64_t>& shape);
Blob read_blob(const std::filesystem::path& path);
std::filesystem::path sidecar_path(const std::filesystem::path& blob_path);

/// Binary little-endian PLY with float32 x/y/z and optional uint8 red/green/blue.
void write_ply(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_ply(const std::filesystem::path& path);

/// Pose file: {"order": [...], "cameras": [[9 numbers], ...]}.
Json poses_to_json(std::span<const CameraPose> cameras);
std::vector<CameraPose> poses_from_json(const Json& value);
void write_poses(const std::filesystem::path& path, std::span<const CameraPose> cameras);
std::vector<CameraPose> read_poses(const std::filesystem::path& path);

}  // namespace geolat
