#include <doctest.h>

#include "geolat/errors.hpp"
#include "geolat/hash.hpp"
#include "geolat/scene.hpp"
#include "support/fixtures.hpp"

#include <fstream>

using namespace geolat;
namespace fs = std::filesystem;

TEST_CASE("rendered sequences satisfy depth and pointmap invariants") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull, 99ull}) {
        const SampledScene s = sample_scene(seed, {32, 48}, 5);
        const auto& seq = s.sequence;
        CHECK(seq.frames == 5);
        CHECK(seq.height == 32);
        CHECK(seq.width == 48);
        CHECK_NOTHROW(seq.check_invariants());
        const auto& c0 = seq.cameras.front();
        CHECK(c0.translation.norm() < 1e-12);
        CHECK(std::abs(c0.rotation.w()) == doctest::Approx(1.0));
        for (size_t i = 0; i < seq.depths.size(); ++i) {
            if (seq.validity[i]) {
                CHECK(seq.depths[i] > 0.0f);
            } else {
                CHECK(seq.depths[i] == 0.0f);
            }
        }
        for (float v : seq.images) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
}

TEST_CASE("scene sampling is deterministic") {
    const SampledScene a = sample_scene(42, {32, 32}, 9);
    const SampledScene b = sample_scene(42, {32, 32}, 9);
    CHECK(a.sequence.images == b.sequence.images);
    CHECK(a.sequence.depths == b.sequence.depths);
    CHECK(a.spec.to_json() == b.spec.to_json());
    const SampledScene c = sample_scene(43, {32, 32}, 9);
    CHECK(a.sequence.images != c.sequence.images);
}

TEST_CASE("spec and trajectory JSON round trip") {
    const SampledScene s = sample_scene(5, {16, 16}, 5);
    CHECK(SceneSpec::from_json(s.spec.to_json()).to_json() == s.spec.to_json());
    CHECK(Trajectory::from_json(s.trajectory.to_json()).to_json() == s.trajectory.to_json());
    SceneSpec bad = s.spec;
    bad.spheres.at(0).radius = -1.0;
    CHECK_THROWS_AS(bad.validate(), InvalidInput);
}

TEST_CASE("any positive frame count renders") {
    CHECK(sample_scene(1, {16, 16}, 6).sequence.frames == 6);
    CHECK_THROWS_AS(sample_scene(1, {16, 16}, 0), InvalidInput);
}

TEST_CASE("held-out split size") {
    CHECK(test_scene_count(8) == 1);
    CHECK(test_scene_count(20) == 2);
    CHECK(test_scene_count(4) == 0);
}

TEST_CASE("dataset synthesis is byte-reproducible and reloads") {
    const fs::path a = fixture::scratch_dir("dataset_a");
    const fs::path b = fixture::scratch_dir("dataset_b");
    const DatasetHandle ha = make_dataset(a, 3, 11, {32, 32}, 5);
    make_dataset(b, 3, 11, {32, 32}, 5);
    CHECK(ha.small_split_warning);
    CHECK(ha.train.size() == 3);
    CHECK(ha.test.empty());
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        const fs::path rel = fs::relative(entry.path(), a);
        CHECK(sha256_file(entry.path()) == sha256_file(b / rel));
    }
    const DatasetHandle reopened = open_dataset(a);
    CHECK(reopened.train == ha.train);
    const RenderedSequence seq = load_sequence(reopened.scene_dir(reopened.train[0]));
    const SampledScene direct = sample_scene(mix_seed(11, 0), {32, 32}, 5);
    CHECK(seq.depths == direct.sequence.depths);
    CHECK(seq.cameras.size() == 5);
    for (size_t i = 0; i < seq.images.size(); ++i) {
        CHECK(std::abs(seq.images[i] - direct.sequence.images[i]) <= 0.5f / 255.0f + 1e-6f);
    }
}

TEST_CASE("PNG, blob, PLY, and pose round trips") {
    const fs::path dir = fixture::scratch_dir("io");
    Image img(4, 5, 3);
    for (size_t i = 0; i < img.data.size(); ++i) {
        img.data[i] = static_cast<float>(i % 256) / 255.0f;
    }
    write_png(dir / "a.png", img);
    const Image back = read_png(dir / "a.png");
    CHECK(back.height == 4);
    CHECK(back.width == 5);
    for (size_t i = 0; i < img.data.size(); ++i) {
        CHECK(back.data[i] == doctest::Approx(img.data[i]).epsilon(1e-6));
    }

    const std::vector<float> values = {1.5f, -2.0f, 3.25f, 0.0f, 7.0f, 8.0f};
    write_blob(dir / "x.bin", values, {2, 3});
    const Blob blob = read_blob(dir / "x.bin");
    CHECK(blob.dtype == "float32");
    CHECK(blob.shape == std::vector<std::int64_t>{2, 3});
    CHECK(blob.f32 == values);

    PointCloud cloud;
    cloud.points = {{0.5, 1.0, -2.0}, {3.0, 4.0, 5.0}};
    cloud.colors = {{1.0f, 0.0f, 0.5f}, {0.0f, 1.0f, 0.0f}};
    write_ply(dir / "c.ply", cloud);
    const PointCloud pc = read_ply(dir / "c.ply");
    REQUIRE(pc.size() == 2);
    CHECK(pc.points[1].isApprox(cloud.points[1]));
    CHECK(pc.has_colors());

    std::vector<CameraPose> cams(3);
    cams[1].translation = Eigen::Vector3d(0.25, -1.0, 2.0);
    write_poses(dir / "p.json", cams);
    const auto cb = read_poses(dir / "p.json");
    REQUIRE(cb.size() == 3);
    CHECK(cb[1].translation.isApprox(cams[1].translation));

    write_json(dir / "j.json", Json{{"b", 1}, {"a", 2}});
    std::ifstream in(dir / "j.json");
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(text.find("\"a\"") < text.find("\"b\""));
}

TEST_CASE("sha256 known answer") {
    CHECK(sha256_hex(std::string_view("abc")) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
