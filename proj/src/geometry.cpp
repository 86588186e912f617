#include "geolat/geometry.hpp"

#include "geolat/errors.hpp"
#include "geolat/nearest.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace geolat {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kRadToDeg = 180.0 / kPi;

template <typename T>
CameraPose parse_camera(std::span<const T> v) {
    if (v.size() != CameraPose::kVectorSize) {
        throw InvalidInput("camera vector must have 9 entries, got " + std::to_string(v.size()));
    }
    for (T x : v) {
        if (!std::isfinite(static_cast<double>(x))) {
            throw InvalidInput("camera vector contains a non-finite value");
        }
    }
    CameraPose pose;
    Eigen::Quaterniond q(v[0], v[1], v[2], v[3]);
    const double norm = q.norm();
    if (norm < 1e-12) {
        throw InvalidInput("camera quaternion has zero norm");
    }
    // Leave unit quaternions untouched so parse/emit round-trips bit-exactly.
    if (std::abs(norm - 1.0) > 1e-15) {
        q.coeffs() /= norm;
    }
    pose.rotation = q;
    pose.translation = Eigen::Vector3d(v[4], v[5], v[6]);
    pose.fov = Eigen::Vector2d(v[7], v[8]);
    pose.validate();
    return pose;
}

// Angle in degrees between two rotations, numerically safe near 0 and 180.
double rotation_angle_deg(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
    const Eigen::Matrix3d d = a.transpose() * b;
    const double c = std::clamp((d.trace() - 1.0) / 2.0, -1.0, 1.0);
    const Eigen::Vector3d axis(d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1));
    const double s = 0.5 * axis.norm();
    return std::atan2(s, c) * kRadToDeg;
}

double direction_angle_deg(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
    return std::atan2(a.cross(b).norm(), a.dot(b)) * kRadToDeg;
}

}  // namespace

const std::array<const char*, CameraPose::kVectorSize>& camera_vector_order() {
    static const std::array<const char*, CameraPose::kVectorSize> order = {
        "qw", "qx", "qy", "qz", "tx", "ty", "tz", "fov_x", "fov_y"};
    return order;
}

CameraPose CameraPose::from_vector(std::span<const double> v) { return parse_camera(v); }
CameraPose CameraPose::from_vector(std::span<const float> v) { return parse_camera(v); }

std::array<double, CameraPose::kVectorSize> CameraPose::to_vector() const {
    return {rotation.w(), rotation.x(), rotation.y(), rotation.z(),
            translation.x(), translation.y(), translation.z(), fov.x(), fov.y()};
}

Intrinsics CameraPose::intrinsics(int height, int width) const {
    Intrinsics k;
    k.fx = (width / 2.0) / std::tan(fov.x() / 2.0);
    k.fy = (height / 2.0) / std::tan(fov.y() / 2.0);
    k.cx = (width - 1) / 2.0;
    k.cy = (height - 1) / 2.0;
    return k;
}

Eigen::Isometry3d CameraPose::camera_to_world() const {
    Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
    t.linear() = rotation_matrix();
    t.translation() = translation;
    return t;
}

void CameraPose::validate() const {
    if (std::abs(rotation.norm() - 1.0) > 1e-6) {
        throw InvalidInput("camera quaternion is not unit length");
    }
    if (!translation.allFinite()) {
        throw InvalidInput("camera translation is not finite");
    }
    for (int i = 0; i < 2; ++i) {
        if (!(fov[i] > 0.0 && fov[i] < kPi)) {
            throw InvalidInput("camera field of view must lie in (0, pi)");
        }
    }
}

void PointCloud::append(const PointCloud& other) {
    if (!points.empty() && has_colors() != other.has_colors()) {
        throw InvalidInput("cannot merge colored and uncolored point clouds");
    }
    points.insert(points.end(), other.points.begin(), other.points.end());
    colors.insert(colors.end(), other.colors.begin(), other.colors.end());
}

PointCloud SimilarityTransform::apply(const PointCloud& cloud) const {
    PointCloud out;
    out.points.reserve(cloud.size());
    for (const auto& p : cloud.points) {
        out.points.push_back(apply(p));
    }
    out.colors = cloud.colors;
    return out;
}

void SimilarityTransform::validate() const {
    if (!(scale > 0.0) || !std::isfinite(scale)) {
        throw InvalidInput("similarity scale must be positive");
    }
    if (!(rotation.transpose() * rotation).isApprox(Eigen::Matrix3d::Identity(), 1e-9) ||
        std::abs(rotation.determinant() - 1.0) > 1e-9) {
        throw InvalidInput("similarity rotation is not a proper rotation");
    }
}

PointCloud unproject_depth(const DepthMap& depth, const CameraPose& camera, std::pair<int, int> image_size) {
    const auto [height, width] = image_size;
    if (depth.height != height || depth.width != width ||
        depth.values.size() != static_cast<size_t>(height) * width || depth.valid.size() != depth.values.size()) {
        throw InvalidInput("depth map dimensions do not match the image size");
    }
    camera.validate();
    const Intrinsics k = camera.intrinsics(height, width);
    const Eigen::Matrix3d rot = camera.rotation_matrix();

    PointCloud cloud;
    for (int v = 0; v < height; ++v) {
        for (int u = 0; u < width; ++u) {
            if (!depth.is_valid(v, u)) {
                continue;
            }
            const double d = depth.at(v, u);
            if (!std::isfinite(d) || d < 0.0) {
                throw InvalidInput("valid depth pixel is negative or non-finite");
            }
            const Eigen::Vector3d cam((u - k.cx) / k.fx * d, (v - k.cy) / k.fy * d, d);
            cloud.points.push_back(rot * cam + camera.translation);
        }
    }
    return cloud;
}

SimilarityTransform umeyama_align(const PointCloud& src, const PointCloud& dst) {
    const size_t m = src.size();
    if (m != dst.size()) {
        throw InvalidInput("umeyama_align needs corresponding point sets of equal size");
    }
    if (m < 3) {
        throw InvalidInput("umeyama_align needs at least 3 correspondences");
    }

    Eigen::Vector3d mean_src = Eigen::Vector3d::Zero();
    Eigen::Vector3d mean_dst = Eigen::Vector3d::Zero();
    for (size_t i = 0; i < m; ++i) {
        mean_src += src.points[i];
        mean_dst += dst.points[i];
    }
    mean_src /= static_cast<double>(m);
    mean_dst /= static_cast<double>(m);

    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
    double var_src = 0.0;
    for (size_t i = 0; i < m; ++i) {
        const Eigen::Vector3d a = src.points[i] - mean_src;
        const Eigen::Vector3d b = dst.points[i] - mean_dst;
        cov += b * a.transpose();
        scatter += a * a.transpose();
        var_src += a.squaredNorm();
    }
    cov /= static_cast<double>(m);
    scatter /= static_cast<double>(m);
    var_src /= static_cast<double>(m);

    // Collinear (or coincident) sources leave the rotation about their line undetermined.
    const Eigen::JacobiSVD<Eigen::Matrix3d> src_svd(scatter);
    const auto& src_sv = src_svd.singularValues();
    if (var_src <= 0.0 || src_sv(1) <= 1e-12 * src_sv(0)) {
        throw DegenerateConfiguration("umeyama_align: source points are collinear");
    }

    const Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (sv(1) <= 1e-12 * std::max(sv(0), 1e-300)) {
        throw DegenerateConfiguration("umeyama_align: cross-covariance is rank deficient");
    }
    Eigen::Vector3d sign = Eigen::Vector3d::Ones();
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) {
        sign(2) = -1.0;
    }

    SimilarityTransform out;
    out.rotation = svd.matrixU() * sign.asDiagonal() * svd.matrixV().transpose();
    out.scale = sv.dot(sign) / var_src;
    if (!(out.scale > 0.0)) {
        throw DegenerateConfiguration("umeyama_align: non-positive optimal scale");
    }
    out.translation = mean_dst - out.scale * out.rotation * mean_src;
    return out;
}

std::vector<size_t> farthest_point_sample(const PointCloud& cloud, size_t k, size_t start_index) {
    const size_t m = cloud.size();
    if (k < 1 || k > m) {
        throw InvalidInput("farthest_point_sample: k must lie in [1, point count]");
    }
    if (start_index >= m) {
        throw InvalidInput("farthest_point_sample: start index out of range");
    }
    std::vector<size_t> picked;
    picked.reserve(k);
    std::vector<double> min_sq(m, std::numeric_limits<double>::infinity());
    std::vector<std::uint8_t> taken(m, 0);
    size_t current = start_index;
    for (size_t step = 0; step < k; ++step) {
        picked.push_back(current);
        taken[current] = 1;
        if (step + 1 == k) {
            break;
        }
        const Eigen::Vector3d& c = cloud.points[current];
        size_t best = 0;
        double best_sq = -1.0;
        for (size_t i = 0; i < m; ++i) {
            const double d = (cloud.points[i] - c).squaredNorm();
            if (d < min_sq[i]) {
                min_sq[i] = d;
            }
            if (!taken[i] && min_sq[i] > best_sq) {
                best_sq = min_sq[i];
                best = i;
            }
        }
        current = best;
    }
    return picked;
}

PointCloud subset(const PointCloud& cloud, std::span<const size_t> indices) {
    PointCloud out;
    out.points.reserve(indices.size());
    for (size_t i : indices) {
        out.points.push_back(cloud.points.at(i));
        if (cloud.has_colors()) {
            out.colors.push_back(cloud.colors.at(i));
        }
    }
    return out;
}

ChamferResult chamfer_metrics(const PointCloud& pred, const PointCloud& gt) {
    if (pred.empty() || gt.empty()) {
        throw InvalidInput("chamfer_metrics needs two nonempty clouds");
    }
    ChamferResult r;
    r.accuracy = mean_nearest_distance(pred, gt);
    r.completeness = mean_nearest_distance(gt, pred);
    r.chamfer = 0.5 * (r.accuracy + r.completeness);
    return r;
}

PoseErrors relative_pose_errors(std::span<const CameraPose> pred, std::span<const CameraPose> gt) {
    if (pred.size() != gt.size()) {
        throw InvalidInput("relative_pose_errors: pose lists differ in length");
    }
    if (pred.size() < 2) {
        throw InvalidInput("relative_pose_errors needs at least two poses");
    }
    const int n = static_cast<int>(pred.size());
    std::vector<Eigen::Matrix3d> rp(n), rg(n);
    for (int i = 0; i < n; ++i) {
        rp[i] = pred[i].rotation_matrix();
        rg[i] = gt[i].rotation_matrix();
    }

    PoseErrors out;
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            // Pose of camera i expressed in camera j.
            const Eigen::Matrix3d rel_pred = rp[j].transpose() * rp[i];
            const Eigen::Matrix3d rel_gt = rg[j].transpose() * rg[i];
            const Eigen::Vector3d t_pred = rp[j].transpose() * (pred[i].translation - pred[j].translation);
            const Eigen::Vector3d t_gt = rg[j].transpose() * (gt[i].translation - gt[j].translation);
            if (t_gt.norm() < 1e-9) {
                out.skipped.emplace_back(i, j);
                continue;
            }
            PairPoseError e;
            e.i = i;
            e.j = j;
            e.rotation_deg = rotation_angle_deg(rel_pred, rel_gt);
            e.translation_deg = t_pred.norm() < 1e-12 ? 180.0 : direction_angle_deg(t_pred, t_gt);
            out.pairs.push_back(e);
        }
    }
    return out;
}

double auc_at_threshold(std::span<const PairPoseError> errors, double threshold_deg) {
    if (!(threshold_deg > 0.0)) {
        throw InvalidInput("auc_at_threshold: threshold must be positive");
    }
    if (errors.empty()) {
        throw InvalidInput("auc_at_threshold: no pose errors");
    }
    std::vector<double> combined;
    combined.reserve(errors.size());
    for (const auto& e : errors) {
        combined.push_back(std::max(e.rotation_deg, e.translation_deg));
    }
    std::sort(combined.begin(), combined.end());

    // The accuracy curve is a step function rising by 1/K at every sorted error.
    const double count = static_cast<double>(combined.size());
    double area = 0.0;
    for (size_t k = 0; k < combined.size(); ++k) {
        if (combined[k] >= threshold_deg) {
            break;
        }
        const double next = k + 1 < combined.size() ? std::min(combined[k + 1], threshold_deg) : threshold_deg;
        area += (static_cast<double>(k + 1) / count) * (next - combined[k]);
    }
    return area / threshold_deg;
}

}  // namespace geolat
