#pragma once

#include "geolat/geometry.hpp"
#include "geolat/io.hpp"
#include "geolat/result.hpp"
#include "geolat/scene.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace geolat {

inline constexpr double kAucThresholdDeg = 30.0;
inline constexpr size_t kProtocolSampleCount = 20000;
inline constexpr size_t kDeskSampleCount = 2000;
inline constexpr int kReportSchemaVersion = 1;

struct GeometryEvaluation {
    ChamferResult metrics;
    SimilarityTransform alignment;  // maps the prediction into the ground-truth frame
};

/**
 * Normalizes both clouds (centroid, mean radius), matches each predicted point to its nearest
 * ground-truth point, solves Umeyama once, farthest-point samples both clouds to `sample_k`
 * starting at index 0, and computes chamfer metrics in ground-truth units.
 */
GeometryEvaluation evaluate_geometry(const PointCloud& pred, const PointCloud& gt, size_t sample_k);

/// AUC@30 of relative pose errors over all frame pairs.
double evaluate_poses(std::span<const CameraPose> pred, std::span<const CameraPose> gt);

struct MetricRow {
    std::string scene;
    std::string result_dir;  // relative to the evaluated predictions root
    double psnr = 0.0;
    double ssim = 0.0;
    double accuracy = 0.0;
    double completeness = 0.0;
    double cd = 0.0;
    double auc30 = 0.0;
};

struct MetricReport {
    int schema_version = kReportSchemaVersion;
    std::string config_hash;
    size_t sample_k = kDeskSampleCount;
    std::vector<MetricRow> rows;

    /// Arithmetic mean of every metric column.
    MetricRow aggregate() const;
    Json to_json() const;
    std::string to_csv() const;
    /// Writes report.json and report.csv.
    void write(const std::filesystem::path& dir) const;
};

/// Per-frame mean PSNR / SSIM plus geometry and pose metrics of one result against its ground truth.
MetricRow evaluate_result(const GenerationResult& pred, const RenderedSequence& gt, size_t sample_k);

/**
 * Evaluates a results tree against ground truth. `pred` is either one result directory
 * (it holds provenance.json) or a directory of per-scene result directories; `gt` is either one
 * scene directory or a directory of scene directories. Scenes are matched by directory name.
 */
MetricReport evaluate_directory(const std::filesystem::path& pred, const std::filesystem::path& gt, size_t sample_k);

}  // namespace geolat
