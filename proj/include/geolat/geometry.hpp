#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace geolat {

/// Pinhole intrinsics in pixel units; pixel (u, v) has its center at integer coordinates.
struct Intrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
};

/**
 * Camera-to-world pose plus field of view.
 *
 * The camera looks down +z with x to the right and y down. `translation` is the
 * camera center in world coordinates. The flat 9-vector layout is
 * [qw, qx, qy, qz, tx, ty, tz, fov_x, fov_y].
 */
struct CameraPose {
    Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    Eigen::Vector2d fov = Eigen::Vector2d::Constant(1.0);

    static constexpr int kVectorSize = 9;

    /// Parses the flat layout; the quaternion is normalized unless it already has unit norm.
    static CameraPose from_vector(std::span<const double> v);
    static CameraPose from_vector(std::span<const float> v);
    std::array<double, kVectorSize> to_vector() const;

    Eigen::Matrix3d rotation_matrix() const { return rotation.toRotationMatrix(); }
    Intrinsics intrinsics(int height, int width) const;
    Eigen::Isometry3d camera_to_world() const;

    /// Throws InvalidInput when the quaternion is not unit or a fov is outside (0, pi).
    void validate() const;
};

/// Names of the 9-vector entries, in order.
const std::array<const char*, CameraPose::kVectorSize>& camera_vector_order();

struct DepthMap {
    int height = 0;
    int width = 0;
    std::vector<double> values;
    std::vector<std::uint8_t> valid;

    DepthMap() = default;
    DepthMap(int h, int w) : height(h), width(w), values(static_cast<size_t>(h) * w, 0.0), valid(values.size(), 0) {}

    double& at(int v, int u) { return values[static_cast<size_t>(v) * width + u]; }
    double at(int v, int u) const { return values[static_cast<size_t>(v) * width + u]; }
    bool is_valid(int v, int u) const { return valid[static_cast<size_t>(v) * width + u] != 0; }
};

struct PointCloud {
    std::vector<Eigen::Vector3d> points;
    std::vector<Eigen::Vector3f> colors;  // empty, or one per point in [0, 1]

    size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
    bool has_colors() const { return !colors.empty(); }
    void append(const PointCloud& other);
};

struct SimilarityTransform {
    double scale = 1.0;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return scale * (rotation * p) + translation; }
    PointCloud apply(const PointCloud& cloud) const;
    void validate() const;
};

/// Back-projects every valid pixel through the pinhole model (z-depth) into world space.
PointCloud unproject_depth(const DepthMap& depth, const CameraPose& camera, std::pair<int, int> image_size);

/// Least-squares Sim(3) minimizing sum ||s R src_i + t - dst_i||^2 over corresponding points.
SimilarityTransform umeyama_align(const PointCloud& src, const PointCloud& dst);

/// Greedy farthest point sampling; ties resolve to the smallest index.
std::vector<size_t> farthest_point_sample(const PointCloud& cloud, size_t k, size_t start_index);

PointCloud subset(const PointCloud& cloud, std::span<const size_t> indices);

struct ChamferResult {
    double accuracy = 0.0;      // mean distance pred -> nearest gt
    double completeness = 0.0;  // mean distance gt -> nearest pred
    double chamfer = 0.0;       // (accuracy + completeness) / 2
};

/// Unsquared Euclidean nearest-neighbor metrics.
ChamferResult chamfer_metrics(const PointCloud& pred, const PointCloud& gt);

struct PairPoseError {
    int i = 0;
    int j = 0;
    double rotation_deg = 0.0;
    double translation_deg = 0.0;
};

struct PoseErrors {
    std::vector<PairPoseError> pairs;
    std::vector<std::pair<int, int>> skipped;  // zero-baseline ground-truth pairs
};

/// Relative rotation / translation-direction errors over all pairs i < j.
PoseErrors relative_pose_errors(std::span<const CameraPose> pred, std::span<const CameraPose> gt);

/// Normalized area under the accuracy curve of max(rot, trans) errors, integrated exactly up to threshold.
double auc_at_threshold(std::span<const PairPoseError> errors, double threshold_deg);

}  // namespace geolat
