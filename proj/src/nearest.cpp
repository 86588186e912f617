#include "geolat/nearest.hpp"

#include "geolat/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace geolat {

NearestNeighborIndex::NearestNeighborIndex(const std::vector<Eigen::Vector3d>& points) : points_(points) {
    if (points_.empty()) {
        throw InvalidInput("nearest-neighbor index needs at least one point");
    }
    use_grid_ = points_.size() > kBruteForceLimit;
    if (!use_grid_) {
        return;
    }

    Eigen::Vector3d lo = points_.front();
    Eigen::Vector3d hi = points_.front();
    for (const auto& p : points_) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const double extent = (hi - lo).maxCoeff();
    const double per_axis = std::ceil(std::cbrt(static_cast<double>(points_.size())));
    cell_size_ = extent > 0.0 ? extent / per_axis : 1.0;
    origin_ = lo;
    for (int a = 0; a < 3; ++a) {
        dims_[a] = static_cast<int>(std::floor((hi[a] - lo[a]) / cell_size_)) + 1;
    }
    for (size_t i = 0; i < points_.size(); ++i) {
        const Eigen::Array3i c = cell_of(points_[i]);
        cells_[key(c.x(), c.y(), c.z())].push_back(static_cast<std::uint32_t>(i));
    }
}

NearestNeighborIndex::CellKey NearestNeighborIndex::key(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return x + static_cast<std::int64_t>(dims_.x()) * (y + static_cast<std::int64_t>(dims_.y()) * z);
}

Eigen::Array3i NearestNeighborIndex::cell_of(const Eigen::Vector3d& p) const {
    Eigen::Array3i c;
    for (int a = 0; a < 3; ++a) {
        const double f = std::floor((p[a] - origin_[a]) / cell_size_);
        c[a] = static_cast<int>(std::clamp(f, -1e9, 1e9));
    }
    return c;
}

NearestNeighborIndex::Hit NearestNeighborIndex::brute_force(const Eigen::Vector3d& query) const {
    Hit best{0, std::numeric_limits<double>::infinity()};
    for (size_t i = 0; i < points_.size(); ++i) {
        const double d = (points_[i] - query).squaredNorm();
        if (d < best.distance) {
            best = {i, d};
        }
    }
    best.distance = std::sqrt(best.distance);
    return best;
}

NearestNeighborIndex::Hit NearestNeighborIndex::nearest(const Eigen::Vector3d& query) const {
    if (!use_grid_) {
        return brute_force(query);
    }
    const Eigen::Array3i qc = cell_of(query);

    // Shells below this radius cannot intersect the occupied grid box.
    int r0 = 0;
    int r_max = 0;
    for (int a = 0; a < 3; ++a) {
        const int below = -qc[a];
        const int above = qc[a] - (dims_[a] - 1);
        r0 = std::max({r0, below, above});
        r_max = std::max({r_max, qc[a], dims_[a] - 1 - qc[a]});
    }

    size_t best_index = 0;
    double best_sq = std::numeric_limits<double>::infinity();
    auto visit = [&](int x, int y, int z) {
        const auto it = cells_.find(key(x, y, z));
        if (it == cells_.end()) {
            return;
        }
        for (std::uint32_t i : it->second) {
            const double d = (points_[i] - query).squaredNorm();
            if (d < best_sq || (d == best_sq && i < best_index)) {
                best_sq = d;
                best_index = i;
            }
        }
    };

    for (int r = r0; r <= r_max; ++r) {
        const int x0 = std::max(qc.x() - r, 0), x1 = std::min(qc.x() + r, dims_.x() - 1);
        const int y0 = std::max(qc.y() - r, 0), y1 = std::min(qc.y() + r, dims_.y() - 1);
        const int z0 = std::max(qc.z() - r, 0), z1 = std::min(qc.z() + r, dims_.z() - 1);
        for (int x = x0; x <= x1; ++x) {
            for (int y = y0; y <= y1; ++y) {
                if (std::abs(x - qc.x()) == r || std::abs(y - qc.y()) == r) {
                    for (int z = z0; z <= z1; ++z) {
                        visit(x, y, z);
                    }
                } else {
                    if (qc.z() - r >= z0) {
                        visit(x, y, qc.z() - r);
                    }
                    if (r > 0 && qc.z() + r <= z1) {
                        visit(x, y, qc.z() + r);
                    }
                }
            }
        }
        // Every cell outside shell r is at least r cell widths away from the query.
        const double bound = r * cell_size_;
        if (best_sq < bound * bound) {
            break;
        }
    }
    return {best_index, std::sqrt(best_sq)};
}

double mean_nearest_distance(const PointCloud& from, const PointCloud& to) {
    const NearestNeighborIndex index(to.points);
    double sum = 0.0;
    for (const auto& p : from.points) {
        sum += index.nearest(p).distance;
    }
    return sum / static_cast<double>(from.size());
}

}  // namespace geolat
