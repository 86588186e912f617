#include <doctest.h>

#include "geolat/cli.hpp"
#include "geolat/errors.hpp"
#include "geolat/hash.hpp"
#include "geolat/pipeline.hpp"
#include "support/fixtures.hpp"

#include <cstdlib>

using namespace geolat;
namespace fs = std::filesystem;

namespace {

struct QuickRun {
    fs::path root;
    fs::path config_file;
    ExperimentConfig config;
};

/// Dataset plus a config file whose run directory starts empty.
QuickRun quick_run(const std::string& name) {
    QuickRun q;
    static const fs::path data = [] {
        const fs::path d = fs::temp_directory_path() / "geolat_test_desk";
        fixture::desk_dataset(d);
        return d;
    }();
    q.root = fixture::scratch_dir(name);
    q.config = fixture::quick_config(data, q.root / "runs");
    q.config_file = q.root / "config.json";
    write_json(q.config_file, q.config.to_json());
    return q;
}

}  // namespace

TEST_CASE("config serialization, hashing, and overrides") {
    const ExperimentConfig d = ExperimentConfig::defaults();
    CHECK(ExperimentConfig::from_json(d.to_json()).hash() == d.hash());
    CHECK(ExperimentConfig::from_json(Json::object()).hash() == d.hash());

    const ExperimentConfig o = ExperimentConfig::load(std::nullopt, {"adapter.lambda2=0.5", "run_dir=elsewhere"});
    CHECK(o.adapter.lambda2 == 0.5);
    CHECK(o.run_dir == fs::path("elsewhere"));
    CHECK(o.hash() != d.hash());
    CHECK(o.stage_hash(Stage::Codec) == d.stage_hash(Stage::Codec));
    CHECK(o.stage_hash(Stage::Adapter) != d.stage_hash(Stage::Adapter));
    CHECK(o.stage_hash(Stage::Diffusion) != d.stage_hash(Stage::Diffusion));
    CHECK(o.stage_hash(Stage::DiffusionRgb) == d.stage_hash(Stage::DiffusionRgb));

    const ExperimentConfig moved = ExperimentConfig::load(std::nullopt, {"run_dir=elsewhere", "data.root=/tmp/d"});
    CHECK(moved.hash() == d.hash());

    const ExperimentConfig c2 = ExperimentConfig::load(std::nullopt, {"codec.steps=7"});
    CHECK(c2.stage_hash(Stage::Prior) != d.stage_hash(Stage::Prior));

    CHECK_THROWS_AS(ExperimentConfig::load(std::nullopt, {"adapter.lamda2=0.5"}), InvalidInput);
    CHECK_THROWS_AS(ExperimentConfig::load(std::nullopt, {"novalue"}), InvalidInput);
    CHECK_THROWS_AS(ExperimentConfig::load(std::nullopt, {"data.resolution=32"}), ConfigMismatch);
}

TEST_CASE("data root defaults to the environment variable") {
    ::setenv("GEN3R_DATA_DIR", "/tmp/somewhere", 1);
    CHECK(ExperimentConfig::defaults().data.root == fs::path("/tmp/somewhere"));
    ::unsetenv("GEN3R_DATA_DIR");
    CHECK(ExperimentConfig::defaults().data.root == fs::path("data/desk"));
}

TEST_CASE("stage names and prerequisites") {
    for (Stage s : {Stage::Codec, Stage::Surrogate, Stage::Prior, Stage::Adapter, Stage::Diffusion,
                    Stage::AdapterNoKl, Stage::DiffusionRgb}) {
        CHECK(stage_from_name(stage_name(s)) == s);
    }
    CHECK_THROWS_AS(stage_from_name("vae"), InvalidInput);
    const bool prior_needs_codec = stage_prerequisites(Stage::Prior) == std::vector<Stage>{Stage::Codec};
    CHECK(prior_needs_codec);
    CHECK(main_stages().size() == 5);
}

TEST_CASE("cli usage errors exit 1") {
    CHECK(fixture::run_cli({}).code == kExitUsage);
    CHECK(fixture::run_cli({"frobnicate"}).code == kExitUsage);
    CHECK(fixture::run_cli({"train"}).code == kExitUsage);
    CHECK(fixture::run_cli({"generate", "--views", "3"}).code == kExitUsage);
    CHECK(fixture::run_cli({"--help"}).code == kExitOk);
}

TEST_CASE("training a stage before its prerequisites exits 2") {
    const QuickRun q = quick_run("prereq");
    const auto r = fixture::run_cli({"train", "--config", q.config_file.string(), "--stage", "adapter"});
    CHECK(r.code == kExitRuntime);
    CHECK(r.err.find("requires stage") != std::string::npos);
    CHECK(r.err.find("geolat train --stage") != std::string::npos);

    Pipeline pipe(q.config);
    CHECK_THROWS_AS(pipe.run_stage(Stage::Prior), MissingPrerequisite);
    GenerateRequest req;
    req.images = {Image(64, 64, 3)};
    CHECK_THROWS_AS(pipe.generate(req), MissingPrerequisite);
}

TEST_CASE("quick end-to-end run through the cli") {
    const QuickRun q = quick_run("e2e");
    const std::string cfg = q.config_file.string();
    const std::string out = (q.root / "results").string();

    auto r = fixture::run_cli({"train", "--config", cfg, "--stage", "all", "--stage", "ablations"});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    for (const char* stage : {"codec", "surrogate", "prior", "adapter", "diffusion", "adapter-nokl", "diffusion-rgb"}) {
        const Json rec = read_json(q.root / "runs" / stage / "stage.json");
        CHECK(rec.at("status") == "complete");
        CHECK(rec.at("config_hash").get<std::string>().size() == 64);
        CHECK(fs::exists(q.root / "runs" / stage / "timing.json"));
    }
    CHECK(fs::exists(q.root / "runs" / "prior" / "prior.json"));

    r = fixture::run_cli({"train", "--config", cfg, "--stage", "codec"});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("cached") != std::string::npos);

    r = fixture::run_cli({"train", "--config", cfg, "--stage", "codec", "--set", "codec.lr=0.002"});
    CHECK(r.code == kExitRuntime);
    CHECK(r.err.find("config hash") != std::string::npos);

    r = fixture::run_cli({"generate", "--config", cfg, "--split", "test", "--views", "2", "--out", out + "/gen"});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    const GenerationResult g = read_result(fs::path(out) / "gen" / "scene_0007");
    CHECK(g.frame_count() == 9);
    CHECK(g.provenance.at("mode") == "first-last");
    CHECK(g.provenance.at("config_hash").get<std::string>().size() == 64);

    r = fixture::run_cli({"evaluate", "--config", cfg, "--pred", out + "/gen", "--gt",
                          (q.config.data.root / "test").string()});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    const Json report = read_json(fs::path(out) / "gen" / "report.json");
    CHECK(report.at("rows").size() == 1);
    CHECK(report.at("config_hash") == g.provenance.at("config_hash"));
    for (const char* key : {"psnr", "ssim", "accuracy", "completeness", "cd", "auc30"}) {
        CHECK(report.at("aggregate").at(key).is_number());
    }
    const std::string digest = sha256_file(fs::path(out) / "gen" / "report.json");
    fixture::run_cli({"evaluate", "--config", cfg, "--pred", out + "/gen", "--gt",
                      (q.config.data.root / "test").string()});
    CHECK(sha256_file(fs::path(out) / "gen" / "report.json") == digest);

    r = fixture::run_cli({"baseline-2stage", "--config", cfg, "--scene", "scene_0001", "--out", out + "/base"});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    CHECK(read_result(fs::path(out) / "base" / "scene_0001").provenance.at("kind") == "baseline-2stage");

    r = fixture::run_cli({"reconstruct", "--config", cfg, "--scene", "scene_0002", "--out", out + "/rec"});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    r = fixture::run_cli({"reconstruct", "--config", cfg, "--scene", "scene_0002", "--surrogate", "--out",
                          out + "/sur"});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);

    r = fixture::run_cli({"inspect-latents", "--config", cfg, "--out", out + "/latents"});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    CHECK(fs::exists(fs::path(out) / "latents" / "latents_adapter.json"));
    CHECK(fs::exists(fs::path(out) / "latents" / "latents_adapter-nokl.json"));
    const Json table = read_json(fs::path(out) / "latents" / "latents_adapter.json");
    CHECK(table.at("channels").size() == 8);

    r = fixture::run_cli({"report-plots", "--config", cfg, "--out", out + "/plots", "--report",
                          out + "/gen/report.json"});
    REQUIRE_MESSAGE(r.code == kExitOk, r.err);
    CHECK(fs::exists(fs::path(out) / "plots" / "loss_codec.png"));
    CHECK(fs::exists(fs::path(out) / "plots" / "loss_diffusion.png"));
    CHECK(fs::exists(fs::path(out) / "plots" / "metric_cd.png"));
}

TEST_CASE("in-process generation keeps the final-geometry invariant") {
    const QuickRun q = quick_run("inproc");
    Pipeline pipe(q.config);
    for (Stage s : main_stages()) pipe.run_stage(s);
    const RenderedSequence seq = load_sequence(open_dataset(q.config.data.root).scene_dir("scene_0003"));

    GenerateRequest req;
    req.images = {seq.frame(0)};
    req.cameras = seq.cameras;
    req.descriptor = seq.descriptor_class;
    req.scene = "scene_0003";
    const GenerationResult a = pipe.generate(req);
    const GenerationResult b = pipe.generate(req);
    CHECK(final_geometry_deviation(a) <= 1e-6);
    CHECK(a.frames[4].data == b.frames[4].data);
    CHECK(a.cloud.points == b.cloud.points);
    CHECK(a.provenance.at("mode") == "first-frame");
    CHECK(a.cameras.size() == 9);

    req.images.push_back(seq.frame(3));
    req.images.push_back(seq.frame(5));
    CHECK_THROWS_AS(pipe.generate(req), InvalidInput);

    std::vector<Image> frames;
    for (int i = 0; i < seq.frames; ++i) frames.push_back(seq.frame(i));
    const GenerationResult rec = pipe.reconstruct(frames, std::nullopt, "scene_0003");
    CHECK(rec.provenance.at("mode") == "all-frames");
    CHECK(final_geometry_deviation(rec) <= 1e-6);

    const LatentGateReport gates = pipe.inspect_latents(Stage::Adapter);
    CHECK(gates.mean_deviation_sigma.size() == 8);
}
