#pragma once

#include "geolat/geometry.hpp"

#include <cstdint>
#include <unordered_map>
#include <vector>

namespace geolat {

/**
 * Exact nearest-neighbor queries over a fixed point set.
 *
 * Small sets (at most kBruteForceLimit points) are scanned directly. Larger sets are
 * bucketed into a uniform hash grid and searched shell by shell until no unvisited cell
 * can hold a closer point. Ties resolve to the smallest point index in both modes.
 */
class NearestNeighborIndex {
public:
    static constexpr size_t kBruteForceLimit = 256;

    explicit NearestNeighborIndex(const std::vector<Eigen::Vector3d>& points);

    struct Hit {
        size_t index = 0;
        double distance = 0.0;
    };

    Hit nearest(const Eigen::Vector3d& query) const;
    bool uses_grid() const { return use_grid_; }

private:
    using CellKey = std::int64_t;

    CellKey key(std::int64_t x, std::int64_t y, std::int64_t z) const;
    Eigen::Array3i cell_of(const Eigen::Vector3d& p) const;
    Hit brute_force(const Eigen::Vector3d& query) const;

    const std::vector<Eigen::Vector3d>& points_;
    bool use_grid_ = false;
    double cell_size_ = 1.0;
    Eigen::Vector3d origin_ = Eigen::Vector3d::Zero();
    Eigen::Array3i dims_ = Eigen::Array3i::Ones();
    std::unordered_map<CellKey, std::vector<std::uint32_t>> cells_;
};

/// Mean distance from each point of `from` to its nearest neighbor in `to`.
double mean_nearest_distance(const PointCloud& from, const PointCloud& to);

}  // namespace geolat
