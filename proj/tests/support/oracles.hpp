#pragma once

// Brute-force reference implementations, written independently of the library code they check.

#include "geolat/geometry.hpp"
#include "geolat/rng.hpp"

#include <vector>

namespace geolat::oracle {

std::vector<size_t> farthest_point_sample(const std::vector<Eigen::Vector3d>& pts, size_t k, size_t start);

struct Chamfer {
    double accuracy;
    double completeness;
    double chamfer;
};
Chamfer chamfer(const std::vector<Eigen::Vector3d>& pred, const std::vector<Eigen::Vector3d>& gt);

/// Horn's unit-quaternion solution for the rotation, then the least-squares scale and translation.
SimilarityTransform horn_similarity(const std::vector<Eigen::Vector3d>& src, const std::vector<Eigen::Vector3d>& dst);

struct PairError {
    int i;
    int j;
    double rot_deg;
    double trans_deg;
};
/// Relative errors from 4x4 world-to-camera extrinsics; zero-baseline ground-truth pairs are omitted.
std::vector<PairError> pose_errors(const std::vector<CameraPose>& pred, const std::vector<CameraPose>& gt);

/// Closed form: mean over pairs of max(0, T - e) / T with e = max(rot, trans).
double auc(const std::vector<double>& combined_errors, double threshold_deg);

double psnr(const std::vector<double>& a, const std::vector<double>& b);

/// Expected latent mask bits, enumerated from the frame grouping rule.
std::vector<std::vector<int>> mask_bits(const std::vector<int>& frame_mask);

/// Which frames each conditioning mode provides.
std::vector<int> provided(int mode, int frames);

// Random instance helpers.
Eigen::Matrix3d random_rotation(Rng& rng);
Eigen::Vector3d random_vector(Rng& rng, double scale = 1.0);
std::vector<Eigen::Vector3d> random_points(Rng& rng, size_t n, double scale = 1.0);
CameraPose random_camera(Rng& rng);

}  // namespace geolat::oracle
