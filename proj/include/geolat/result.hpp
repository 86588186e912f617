#pragma once

#include "geolat/geometry.hpp"
#include "geolat/image.hpp"
#include "geolat/io.hpp"

#include <filesystem>
#include <vector>

namespace geolat {

/// Decoded output of one generation, reconstruction, or baseline run.
struct GenerationResult {
    std::vector<Image> frames;
    std::vector<DepthMap> depths;
    std::vector<CameraPose> cameras;
    std::vector<float> pointmaps;  // N x H x W x 3, decoded by the geometry heads
    PointCloud cloud;              // unprojection of `depths` through `cameras`
    Json provenance = Json::object();

    int frame_count() const { return static_cast<int>(frames.size()); }
};

/// Unprojects every frame's valid depth through its camera and concatenates the points, frame by frame.
PointCloud merge_depths(const std::vector<DepthMap>& depths, const std::vector<CameraPose>& cameras);

/// Largest distance between the stored cloud and a fresh unprojection of depths and cameras.
double final_geometry_deviation(const GenerationResult& result);

/// Directory layout: frame_XXX.png, depth.bin, validity.bin, pointmaps.bin, poses.json, cloud.ply, provenance.json.
void write_result(const std::filesystem::path& dir, const GenerationResult& result);
GenerationResult read_result(const std::filesystem::path& dir);

}  // namespace geolat
