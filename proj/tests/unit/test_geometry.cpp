#include <doctest.h>

#include "geolat/errors.hpp"
#include "geolat/geometry.hpp"
#include "geolat/nearest.hpp"
#include "support/oracles.hpp"

#include <cmath>
#include <numbers>

using namespace geolat;

TEST_CASE("camera vector round trip and validation") {
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        const CameraPose c = oracle::random_camera(rng);
        const auto v = c.to_vector();
        const CameraPose back = CameraPose::from_vector(std::span<const double>(v));
        CHECK(back.rotation.coeffs().isApprox(c.rotation.coeffs(), 1e-12));
        CHECK(back.translation.isApprox(c.translation, 1e-12));
        CHECK(back.fov.isApprox(c.fov, 1e-12));
    }
    CHECK(std::string(camera_vector_order()[0]) == "qw");
    CHECK(std::string(camera_vector_order()[8]) == "fov_y");

    CameraPose bad;
    bad.fov = Eigen::Vector2d(0.0, 1.0);
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
    bad.fov = Eigen::Vector2d(1.0, std::numbers::pi);
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
}

TEST_CASE("intrinsics follow the field of view") {
    CameraPose c;
    c.fov = Eigen::Vector2d(std::numbers::pi / 2, std::numbers::pi / 2);
    const Intrinsics k = c.intrinsics(32, 64);
    CHECK(k.fx == doctest::Approx(32.0));
    CHECK(k.fy == doctest::Approx(16.0));
    CHECK(k.cx == doctest::Approx(31.5));
    CHECK(k.cy == doctest::Approx(15.5));
}

TEST_CASE("unprojection inverts projection") {
    Rng rng(9);
    const CameraPose cam = oracle::random_camera(rng);
    DepthMap d(12, 16);
    for (int v = 0; v < 12; ++v) {
        for (int u = 0; u < 16; ++u) {
            d.at(v, u) = 1.0 + 0.1 * u + 0.05 * v;
            d.valid[static_cast<size_t>(v) * 16 + u] = (u + v) % 3 != 0;
        }
    }
    const PointCloud cloud = unproject_depth(d, cam, {12, 16});
    const Intrinsics k = cam.intrinsics(12, 16);
    const Eigen::Isometry3d world_to_cam = cam.camera_to_world().inverse();
    size_t idx = 0;
    for (int v = 0; v < 12; ++v) {
        for (int u = 0; u < 16; ++u) {
            if (!d.is_valid(v, u)) continue;
            const Eigen::Vector3d pc = world_to_cam * cloud.points[idx++];
            CHECK(pc.z() == doctest::Approx(d.at(v, u)).epsilon(1e-12));
            CHECK(k.fx * pc.x() / pc.z() + k.cx == doctest::Approx(u).epsilon(1e-9));
            CHECK(k.fy * pc.y() / pc.z() + k.cy == doctest::Approx(v).epsilon(1e-9));
        }
    }
    CHECK(idx == cloud.size());
}

TEST_CASE("umeyama rejects degenerate inputs") {
    PointCloud a, b;
    for (int i = 0; i < 5; ++i) {
        a.points.emplace_back(i, 2.0 * i, -i);
        b.points.emplace_back(i, i, i);
    }
    CHECK_THROWS_AS(umeyama_align(a, b), DegenerateConfiguration);
    b.points.pop_back();
    CHECK_THROWS_AS(umeyama_align(a, b), InvalidInput);
}

TEST_CASE("umeyama handles reflected targets with a proper rotation") {
    Rng rng(21);
    const auto src = oracle::random_points(rng, 30);
    PointCloud s, d;
    s.points = src;
    for (const auto& p : src) {
        d.points.emplace_back(-p.x(), p.y(), p.z());
    }
    const SimilarityTransform t = umeyama_align(s, d);
    CHECK(t.rotation.determinant() == doctest::Approx(1.0));
    const SimilarityTransform ref = oracle::horn_similarity(src, d.points);
    CHECK((t.rotation - ref.rotation).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(t.scale == doctest::Approx(ref.scale).epsilon(1e-12));
}

TEST_CASE("grid nearest neighbor equals brute force on large clouds") {
    Rng rng(5);
    for (size_t n : {300, 1000, 3000}) {
        auto pts = oracle::random_points(rng, n, 3.0);
        // Clustered points stress uneven cell occupancy.
        for (size_t i = 0; i < n / 3; ++i) {
            pts[i] = pts[i] * 0.01 + Eigen::Vector3d(1, 1, 1);
        }
        NearestNeighborIndex index(pts);
        CHECK(index.uses_grid());
        for (int q = 0; q < 200; ++q) {
            const Eigen::Vector3d query = oracle::random_vector(rng, 4.0);
            size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (size_t i = 0; i < n; ++i) {
                const double dd = (pts[i] - query).norm();
                if (dd < best_d) {
                    best_d = dd;
                    best = i;
                }
            }
            const auto hit = index.nearest(query);
            CHECK(hit.index == best);
            CHECK(hit.distance == doctest::Approx(best_d).epsilon(1e-15));
        }
    }
}

TEST_CASE("chamfer metrics of a cloud with itself are zero") {
    Rng rng(2);
    PointCloud c;
    c.points = oracle::random_points(rng, 500);
    const ChamferResult r = chamfer_metrics(c, c);
    CHECK(r.accuracy == 0.0);
    CHECK(r.completeness == 0.0);
    CHECK_THROWS_AS(chamfer_metrics(c, PointCloud{}), InvalidInput);
}

TEST_CASE("farthest point sampling argument checks") {
    PointCloud c;
    c.points = {Eigen::Vector3d::Zero(), Eigen::Vector3d::Ones()};
    CHECK_THROWS_AS(farthest_point_sample(c, 3, 0), InvalidInput);
    CHECK_THROWS_AS(farthest_point_sample(c, 0, 0), InvalidInput);
    CHECK_THROWS_AS(farthest_point_sample(c, 1, 2), InvalidInput);
    CHECK(farthest_point_sample(c, 2, 1) == std::vector<size_t>{1, 0});
}

TEST_CASE("pose errors are invariant to a global similarity of the prediction") {
    Rng rng(12);
    std::vector<CameraPose> gt(6);
    for (auto& c : gt) c = oracle::random_camera(rng);
    const Eigen::Matrix3d r = oracle::random_rotation(rng);
    const Eigen::Vector3d t = oracle::random_vector(rng, 2.0);
    std::vector<CameraPose> moved = gt;
    for (auto& c : moved) {
        c.rotation = Eigen::Quaterniond(r * c.rotation_matrix());
        c.translation = 2.5 * (r * c.translation) + t;
    }
    const PoseErrors e = relative_pose_errors(moved, gt);
    CHECK(e.pairs.size() == 15);
    for (const auto& p : e.pairs) {
        CHECK(p.rotation_deg < 1e-5);
        CHECK(p.translation_deg < 1e-5);
    }
    CHECK(auc_at_threshold(e.pairs, 30.0) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("auc edge cases") {
    std::vector<PairPoseError> errs(2);
    errs[0].rotation_deg = 40.0;
    errs[1].translation_deg = 31.0;
    CHECK(auc_at_threshold(errs, 30.0) == 0.0);
    CHECK_THROWS_AS(auc_at_threshold({}, 30.0), InvalidInput);
    CHECK_THROWS_AS(auc_at_threshold(errs, 0.0), InvalidInput);
}

TEST_CASE("umeyama residual is not improved by small perturbations") {
    Rng rng(31);
    for (int inst = 0; inst < 20; ++inst) {
        const auto src = oracle::random_points(rng, 40);
        std::vector<Eigen::Vector3d> dst;
        const Eigen::Matrix3d r = oracle::random_rotation(rng);
        for (const auto& p : src) dst.push_back(1.7 * (r * p) + oracle::random_vector(rng, 0.2));
        PointCloud s, d;
        s.points = src;
        d.points = dst;
        const SimilarityTransform t = umeyama_align(s, d);
        auto residual = [&](const SimilarityTransform& x) {
            double sum = 0.0;
            for (size_t i = 0; i < src.size(); ++i) sum += (x.apply(src[i]) - dst[i]).squaredNorm();
            return sum;
        };
        const double best = residual(t);
        for (int k = 0; k < 20; ++k) {
            SimilarityTransform p = t;
            p.scale *= 1.0 + rng.uniform(-1e-3, 1e-3);
            p.rotation = Eigen::AngleAxisd(1e-3, oracle::random_vector(rng).normalized()).toRotationMatrix() * p.rotation;
            p.translation += oracle::random_vector(rng, 1e-3);
            CHECK(residual(p) >= best);
        }
    }
}
