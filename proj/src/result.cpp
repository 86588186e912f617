#include "geolat/result.hpp"

#include "geolat/errors.hpp"

#include <cstdio>

namespace geolat {

namespace fs = std::filesystem;

PointCloud merge_depths(const std::vector<DepthMap>& depths, const std::vector<CameraPose>& cameras) {
    if (depths.size() != cameras.size()) {
        throw InvalidInput("depth and camera counts differ");
    }
    PointCloud cloud;
    for (size_t i = 0; i < depths.size(); ++i) {
        cloud.append(unproject_depth(depths[i], cameras[i], {depths[i].height, depths[i].width}));
    }
    return cloud;
}

double final_geometry_deviation(const GenerationResult& result) {
    const PointCloud fresh = merge_depths(result.depths, result.cameras);
    if (fresh.size() != result.cloud.size()) {
        return std::numeric_limits<double>::infinity();
    }
    double worst = 0.0;
    for (size_t k = 0; k < fresh.size(); ++k) {
        worst = std::max(worst, (fresh.points[k] - result.cloud.points[k]).norm());
    }
    return worst;
}

void write_result(const fs::path& dir, const GenerationResult& result) {
    if (result.frames.empty() || result.depths.size() != result.frames.size() ||
        result.cameras.size() != result.frames.size()) {
        throw InvalidInput("generation result has inconsistent frame counts");
    }
    fs::create_directories(dir);
    const int n = result.frame_count();
    const int h = result.frames.front().height, w = result.frames.front().width;
    std::vector<float> depth;
    std::vector<std::uint8_t> valid;
    for (int i = 0; i < n; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%03d.png", i);
        write_png(dir / name, result.frames[i]);
        for (size_t k = 0; k < result.depths[i].values.size(); ++k) {
            depth.push_back(static_cast<float>(result.depths[i].values[k]));
            valid.push_back(result.depths[i].valid[k]);
        }
    }
    write_blob(dir / "depth.bin", depth, {n, h, w});
    write_blob(dir / "validity.bin", valid, {n, h, w});
    if (!result.pointmaps.empty()) {
        write_blob(dir / "pointmaps.bin", result.pointmaps, {n, h, w, 3});
    }
    write_poses(dir / "poses.json", result.cameras);
    write_ply(dir / "cloud.ply", result.cloud);
    write_json(dir / "provenance.json", result.provenance);
}

GenerationResult read_result(const fs::path& dir) {
    GenerationResult r;
    const Blob depth = read_blob(dir / "depth.bin");
    const Blob valid = read_blob(dir / "validity.bin");
    if (depth.shape.size() != 3 || valid.shape != depth.shape) {
        throw InvalidInput("unexpected depth layout in " + dir.string());
    }
    const int n = static_cast<int>(depth.shape[0]);
    const int h = static_cast<int>(depth.shape[1]), w = static_cast<int>(depth.shape[2]);
    const size_t hw = static_cast<size_t>(h) * w;
    for (int i = 0; i < n; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%03d.png", i);
        r.frames.push_back(read_png(dir / name));
        DepthMap d(h, w);
        for (size_t k = 0; k < hw; ++k) {
            d.values[k] = depth.f32[i * hw + k];
            d.valid[k] = valid.u8[i * hw + k];
        }
        r.depths.push_back(std::move(d));
    }
    if (fs::exists(dir / "pointmaps.bin")) {
        r.pointmaps = read_blob(dir / "pointmaps.bin").f32;
    }
    r.cameras = read_poses(dir / "poses.json");
    r.cloud = read_ply(dir / "cloud.ply");
    r.provenance = read_json(dir / "provenance.json");
    return r;
}

}  // namespace geolat
