#include <doctest.h>

#include "geolat/errors.hpp"
#include "geolat/evaluation.hpp"
#include "geolat/hash.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace geolat;
namespace fs = std::filesystem;

namespace {

/// Ground truth repackaged as a result, optionally moved by a similarity transform.
GenerationResult result_from_truth(const RenderedSequence& seq, const SimilarityTransform& t) {
    GenerationResult r;
    for (int i = 0; i < seq.frames; ++i) {
        r.frames.push_back(seq.frame(i));
        DepthMap d = seq.depth(i);
        for (auto& v : d.values) v *= t.scale;
        r.depths.push_back(d);
        CameraPose c = seq.cameras[i];
        c.rotation = Eigen::Quaterniond(t.rotation * c.rotation_matrix());
        c.translation = t.apply(c.translation);
        r.cameras.push_back(c);
    }
    r.pointmaps = seq.pointmaps;
    r.cloud = merge_depths(r.depths, r.cameras);
    r.provenance = Json{{"scene", "s"}, {"config_hash", "abc"}};
    return r;
}

}  // namespace

TEST_CASE("geometry evaluation removes global scale and offset") {
    const SampledScene s = sample_scene(4, {32, 32}, 5);
    const PointCloud gt = s.sequence.valid_points();
    SimilarityTransform t;
    t.scale = 2.0;
    t.translation = Eigen::Vector3d(1, -2, 3);
    const GeometryEvaluation e = evaluate_geometry(t.apply(gt), gt, 500);
    CHECK(e.metrics.chamfer < 1e-9);
    CHECK(e.alignment.scale == doctest::Approx(0.5).epsilon(1e-9));
    CHECK_THROWS_AS(evaluate_geometry(gt, gt, gt.size() + 1), InvalidInput);
    CHECK(evaluate_geometry(gt, gt, 500).metrics.chamfer < 1e-12);
}

TEST_CASE("metric row of a perfect result") {
    const SampledScene s = sample_scene(8, {32, 32}, 5);
    const GenerationResult r = result_from_truth(s.sequence, SimilarityTransform{});
    CHECK(final_geometry_deviation(r) == 0.0);
    const MetricRow row = evaluate_result(r, s.sequence, 300);
    CHECK(row.psnr == kPsnrIdentical);
    CHECK(row.ssim == doctest::Approx(1.0));
    CHECK(row.cd < 1e-5);
    CHECK(row.auc30 == doctest::Approx(1.0));
}

TEST_CASE("result directories round trip and keep the final-geometry invariant") {
    const auto dir = fixture::scratch_dir("result_io");
    const SampledScene s = sample_scene(8, {32, 32}, 5);
    SimilarityTransform t;
    t.scale = 1.5;
    const GenerationResult r = result_from_truth(s.sequence, t);
    write_result(dir / "r", r);
    const GenerationResult back = read_result(dir / "r");
    CHECK(back.frame_count() == 5);
    CHECK(back.cloud.size() == r.cloud.size());
    CHECK(back.provenance == r.provenance);
    CHECK(back.depths[2].valid == r.depths[2].valid);
    // The cloud is stored as float32.
    CHECK(final_geometry_deviation(back) < 1e-5);
}

TEST_CASE("reports are deterministic and complete") {
    const auto root = fixture::scratch_dir("report");
    const DatasetHandle h = make_dataset(root / "data", 2, 3, {32, 32}, 5);
    for (const auto& id : h.train) {
        const RenderedSequence seq = load_sequence(h.scene_dir(id));
        SimilarityTransform t;
        t.translation = Eigen::Vector3d(0.1, 0.0, 0.0);
        GenerationResult r = result_from_truth(seq, t);
        r.frames[1].data[0] = 0.5f;
        r.provenance["scene"] = id;
        write_result(root / "pred" / id, r);
    }
    const MetricReport a = evaluate_directory(root / "pred", root / "data" / "train", 300);
    a.write(root / "out_a");
    const MetricReport b = evaluate_directory(root / "pred", root / "data", 300);
    b.write(root / "out_b");
    CHECK(sha256_file(root / "out_a" / "report.json") == sha256_file(root / "out_b" / "report.json"));
    CHECK(sha256_file(root / "out_a" / "report.csv") == sha256_file(root / "out_b" / "report.csv"));

    const Json j = read_json(root / "out_a" / "report.json");
    CHECK(j.at("schema_version") == kReportSchemaVersion);
    CHECK(j.at("config_hash") == "abc");
    CHECK(j.at("rows").size() == 2);
    for (const char* key : {"psnr", "ssim", "accuracy", "completeness", "cd", "auc30", "scene"}) {
        CHECK(j.at("rows")[0].contains(key));
        if (std::string(key) != "scene") CHECK(j.at("aggregate").contains(key));
    }

    // Each metric is reproducible from the exported artifacts alone.
    const GenerationResult r0 = read_result(root / "pred" / h.train[0]);
    const MetricRow direct = evaluate_result(r0, load_sequence(h.scene_dir(h.train[0])), 300);
    CHECK(j.at("rows")[0].at("psnr").get<double>() == direct.psnr);
    CHECK(j.at("rows")[0].at("cd").get<double>() == direct.cd);
    CHECK(j.at("rows")[0].at("auc30").get<double>() == direct.auc30);

    CHECK(a.to_csv().find("scene,") == 0);
}
