#include "geolat/evaluation.hpp"

#include "geolat/errors.hpp"
#include "geolat/image.hpp"
#include "geolat/nearest.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace geolat {

namespace fs = std::filesystem;

namespace {

struct Normalization {
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    double radius = 1.0;
};

Normalization normalization_of(const PointCloud& cloud) {
    Normalization n;
    for (const auto& p : cloud.points) {
        n.centroid += p;
    }
    n.centroid /= static_cast<double>(cloud.size());
    double r = 0.0;
    for (const auto& p : cloud.points) {
        r += (p - n.centroid).norm();
    }
    r /= static_cast<double>(cloud.size());
    n.radius = r > 0.0 ? r : 1.0;
    return n;
}

PointCloud normalized(const PointCloud& cloud, const Normalization& n) {
    PointCloud out;
    out.points.reserve(cloud.size());
    for (const auto& p : cloud.points) {
        out.points.push_back((p - n.centroid) / n.radius);
    }
    return out;
}

std::string format_double(double v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
}

}  // namespace

GeometryEvaluation evaluate_geometry(const PointCloud& pred, const PointCloud& gt, size_t sample_k) {
    if (pred.empty() || gt.empty()) {
        throw InvalidInput("geometry evaluation needs nonempty clouds");
    }
    if (sample_k == 0 || sample_k > pred.size() || sample_k > gt.size()) {
        throw InvalidInput("sample count must lie in [1, min(|pred|, |gt|)]");
    }
    const Normalization np = normalization_of(pred);
    const Normalization ng = normalization_of(gt);
    const PointCloud pn = normalized(pred, np);
    const PointCloud gn = normalized(gt, ng);

    const NearestNeighborIndex index(gn.points);
    PointCloud matched;
    matched.points.reserve(pn.size());
    for (const auto& p : pn.points) {
        matched.points.push_back(gn.points[index.nearest(p).index]);
    }
    const SimilarityTransform s = umeyama_align(pn, matched);

    // Compose: gt_denorm o S o pred_norm.
    GeometryEvaluation out;
    out.alignment.scale = s.scale * ng.radius / np.radius;
    out.alignment.rotation = s.rotation;
    out.alignment.translation = ng.radius * (s.translation - s.scale * (s.rotation * np.centroid) / np.radius) + ng.centroid;

    const PointCloud aligned = out.alignment.apply(pred);
    const auto pi = farthest_point_sample(aligned, sample_k, 0);
    const auto gi = farthest_point_sample(gt, sample_k, 0);
    out.metrics = chamfer_metrics(subset(aligned, pi), subset(gt, gi));
    return out;
}

double evaluate_poses(std::span<const CameraPose> pred, std::span<const CameraPose> gt) {
    const PoseErrors errors = relative_pose_errors(pred, gt);
    return auc_at_threshold(errors.pairs, kAucThresholdDeg);
}

MetricRow MetricReport::aggregate() const {
    MetricRow m;
    m.scene = "mean";
    if (rows.empty()) {
        return m;
    }
    for (const auto& r : rows) {
        m.psnr += r.psnr;
        m.ssim += r.ssim;
        m.accuracy += r.accuracy;
        m.completeness += r.completeness;
        m.cd += r.cd;
        m.auc30 += r.auc30;
    }
    const double n = static_cast<double>(rows.size());
    m.psnr /= n;
    m.ssim /= n;
    m.accuracy /= n;
    m.completeness /= n;
    m.cd /= n;
    m.auc30 /= n;
    return m;
}

namespace {
Json row_json(const MetricRow& r, bool with_dir) {
    Json j = {{"scene", r.scene},       {"psnr", r.psnr},
              {"ssim", r.ssim},         {"accuracy", r.accuracy},
              {"completeness", r.completeness}, {"cd", r.cd},
              {"auc30", r.auc30}};
    if (with_dir) {
        j["result_dir"] = r.result_dir;
    }
    return j;
}
}  // namespace

Json MetricReport::to_json() const {
    Json rows_json = Json::array();
    for (const auto& r : rows) {
        rows_json.push_back(row_json(r, true));
    }
    Json agg = row_json(aggregate(), false);
    agg.erase("scene");
    return {{"schema_version", schema_version}, {"config_hash", config_hash}, {"sample_k", sample_k},
            {"auc_threshold_deg", kAucThresholdDeg}, {"rows", rows_json}, {"aggregate", agg}};
}

std::string MetricReport::to_csv() const {
    std::ostringstream out;
    out << "scene,psnr,ssim,accuracy,completeness,cd,auc30,result_dir\n";
    auto emit = [&](const MetricRow& r) {
        out << r.scene << ',' << format_double(r.psnr) << ',' << format_double(r.ssim) << ','
            << format_double(r.accuracy) << ',' << format_double(r.completeness) << ',' << format_double(r.cd)
            << ',' << format_double(r.auc30) << ',' << r.result_dir << '\n';
    };
    for (const auto& r : rows) {
        emit(r);
    }
    emit(aggregate());
    return out.str();
}

void MetricReport::write(const fs::path& dir) const {
    fs::create_directories(dir);
    write_json(dir / "report.json", to_json());
    std::ofstream csv(dir / "report.csv", std::ios::binary);
    csv << to_csv();
}

MetricRow evaluate_result(const GenerationResult& pred, const RenderedSequence& gt, size_t sample_k) {
    if (pred.frame_count() != gt.frames) {
        throw InvalidInput("predicted and ground-truth frame counts differ");
    }
    MetricRow row;
    for (int i = 0; i < gt.frames; ++i) {
        const Image g = gt.frame(i);
        row.psnr += psnr(pred.frames[i], g);
        row.ssim += ssim(pred.frames[i], g);
    }
    row.psnr /= gt.frames;
    row.ssim /= gt.frames;
    const auto geo = evaluate_geometry(pred.cloud, gt.valid_points(), sample_k);
    row.accuracy = geo.metrics.accuracy;
    row.completeness = geo.metrics.completeness;
    row.cd = geo.metrics.chamfer;
    row.auc30 = evaluate_poses(pred.cameras, gt.cameras);
    return row;
}

namespace {
bool is_result_dir(const fs::path& p) { return fs::exists(p / "provenance.json"); }
bool is_scene_dir(const fs::path& p) { return fs::exists(p / "spec.json"); }

fs::path find_gt_scene(const fs::path& gt, const std::string& scene) {
    if (is_scene_dir(gt)) {
        return gt;
    }
    for (const fs::path& candidate : {gt / scene, gt / "train" / scene, gt / "test" / scene}) {
        if (is_scene_dir(candidate)) {
            return candidate;
        }
    }
    throw InvalidInput("no ground-truth scene " + scene + " under " + gt.string());
}
}  // namespace

MetricReport evaluate_directory(const fs::path& pred, const fs::path& gt, size_t sample_k) {
    std::vector<fs::path> results;
    if (is_result_dir(pred)) {
        results.push_back(pred);
    } else if (fs::is_directory(pred)) {
        for (const auto& entry : fs::directory_iterator(pred)) {
            if (entry.is_directory() && is_result_dir(entry.path())) {
                results.push_back(entry.path());
            }
        }
    }
    if (results.empty()) {
        throw InvalidInput("no result directories under " + pred.string());
    }
    std::sort(results.begin(), results.end());

    MetricReport report;
    report.sample_k = sample_k;
    std::set<std::string> hashes;
    for (const auto& dir : results) {
        const GenerationResult r = read_result(dir);
        const std::string scene = r.provenance.value("scene", dir.filename().string());
        const RenderedSequence seq = load_sequence(find_gt_scene(gt, scene));
        MetricRow row = evaluate_result(r, seq, sample_k);
        row.scene = scene;
        row.result_dir = dir.lexically_relative(pred).lexically_normal().string();
        report.rows.push_back(row);
        hashes.insert(r.provenance.value("config_hash", std::string()));
    }
    for (const auto& h : hashes) {
        report.config_hash += (report.config_hash.empty() ? "" : ",") + h;
    }
    return report;
}

}  // namespace geolat
