#pragma once

#include "geolat/geometry.hpp"
#include "geolat/image.hpp"
#include "geolat/io.hpp"
#include "geolat/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace geolat {

struct Sphere {
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    double radius = 1.0;
    Eigen::Vector3d albedo = Eigen::Vector3d::Constant(0.5);
};

/// Checkered disk lying in the plane y = height.
struct GroundPlane {
    double height = 0.0;
    Eigen::Vector3d color_a{0.62, 0.60, 0.55};
    Eigen::Vector3d color_b{0.50, 0.50, 0.47};
    double checker_scale = 1.0;
    double extent_radius = 8.0;
};

struct SceneSpec {
    std::uint64_t seed = 0;
    std::vector<Sphere> spheres;
    GroundPlane ground;
    int descriptor_class = 0;
    int num_classes = 8;

    static constexpr int kMaxObjects = 8;

    void validate() const;
    Json to_json() const;
    static SceneSpec from_json(const Json& j);
};

enum class TrajectoryKind { Orbit, Dolly, Arc };

/**
 * Camera path around `target`, world y up.
 *
 * Orbit: fixed radius and height, azimuth sweeps `span_deg`.
 * Arc: as orbit, with height rising by `rise` at mid-path and returning.
 * Dolly: fixed azimuth, distance shrinking linearly to (1 - dolly_fraction) of the radius.
 */
struct Trajectory {
    TrajectoryKind kind = TrajectoryKind::Orbit;
    int frame_count = 9;
    double radius = 5.0;
    double height = 2.0;
    double span_deg = 75.0;
    double start_angle = 0.0;
    double rise = 0.5;
    double dolly_fraction = 0.4;
    double fov = 1.0471975511965976;  // 60 degrees
    Eigen::Vector3d target{0.0, 0.4, 0.0};

    struct WorldCamera {
        Eigen::Matrix3d rotation;  // camera-to-world, columns = right, down, forward
        Eigen::Vector3d eye;
    };
    std::vector<WorldCamera> cameras() const;

    void validate() const;
    Json to_json() const;
    static Trajectory from_json(const Json& j);
};

/// Per-pixel label: 0 ground, k + 1 for sphere k, kSkyLabel for misses.
inline constexpr std::uint8_t kSkyLabel = 255;

struct RenderedSequence {
    int frames = 0;
    int height = 0;
    int width = 0;
    std::vector<float> images;          // N x H x W x 3
    std::vector<float> depths;          // N x H x W (z-depth; 0 where invalid)
    std::vector<std::uint8_t> validity; // N x H x W
    std::vector<float> pointmaps;       // N x H x W x 3, first-camera frame
    std::vector<std::uint8_t> labels;   // N x H x W
    std::vector<CameraPose> cameras;    // relative to camera 0
    int descriptor_class = 0;

    size_t pixels_per_frame() const { return static_cast<size_t>(height) * width; }
    Image frame(int i) const;
    DepthMap depth(int i) const;
    /// All valid pointmap entries with their image colors.
    PointCloud valid_points() const;
    /// Throws InvalidInput unless depth/pointmap consistency and positivity hold.
    void check_invariants(double tolerance = 1e-5) const;
};

/// Ray-casts spheres and ground (closest hit) with Lambertian shading under one directional light.
RenderedSequence render_sequence(const SceneSpec& spec, const Trajectory& traj, std::pair<int, int> resolution);

SceneSpec sample_scene_spec(Rng& rng, std::uint64_t seed, int num_classes = 8);
Trajectory sample_trajectory(Rng& rng, int frame_count);

struct SampledScene {
    SceneSpec spec;
    Trajectory trajectory;
    RenderedSequence sequence;
};

/// Samples a spec and orbit from `seed`, renders, and checks the sequence invariants.
SampledScene sample_scene(std::uint64_t seed, std::pair<int, int> resolution, int frame_count);

/// Rounds images to 8-bit levels, matching what a PNG round trip produces.
void quantize_images(RenderedSequence& seq);

struct DatasetHandle {
    std::filesystem::path root;
    std::vector<std::string> train;
    std::vector<std::string> test;
    bool small_split_warning = false;

    std::filesystem::path scene_dir(const std::string& id) const;
    std::vector<std::string> scenes(const std::vector<std::string>& splits) const;
};

/// Number of held-out scenes: round(10% of count), taken from the highest indices.
int test_scene_count(int count);

DatasetHandle make_dataset(const std::filesystem::path& root, int count, std::uint64_t seed,
                           std::pair<int, int> resolution, int frame_count);
DatasetHandle open_dataset(const std::filesystem::path& root);

void write_sequence(const std::filesystem::path& dir, const RenderedSequence& seq, const SceneSpec& spec,
                    const Trajectory& traj);
RenderedSequence load_sequence(const std::filesystem::path& dir);

}  // namespace geolat
