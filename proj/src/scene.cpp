#include "geolat/scene.hpp"

#include "geolat/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

namespace fs = std::filesystem;

namespace geolat {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kHitEpsilon = 1e-6;

Json vec_json(const Eigen::Vector3d& v) { return Json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d json_vec(const Json& j) {
    return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

const char* kind_name(TrajectoryKind k) {
    switch (k) {
        case TrajectoryKind::Orbit: return "orbit";
        case TrajectoryKind::Dolly: return "dolly";
        case TrajectoryKind::Arc: return "arc";
    }
    return "orbit";
}

TrajectoryKind kind_from_name(const std::string& s) {
    if (s == "orbit") return TrajectoryKind::Orbit;
    if (s == "dolly") return TrajectoryKind::Dolly;
    if (s == "arc") return TrajectoryKind::Arc;
    throw InvalidInput("unknown trajectory kind " + s);
}

Eigen::Matrix3d look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target) {
    const Eigen::Vector3d forward = (target - eye).normalized();
    const Eigen::Vector3d up(0.0, 1.0, 0.0);
    const Eigen::Vector3d right = forward.cross(up).normalized();
    const Eigen::Vector3d down = forward.cross(right);
    Eigen::Matrix3d r;
    r.col(0) = right;
    r.col(1) = down;
    r.col(2) = forward;
    return r;
}

const std::array<std::array<Eigen::Vector3d, 3>, 2> kPalettes = {{
    {Eigen::Vector3d(0.85, 0.30, 0.25), Eigen::Vector3d(0.90, 0.60, 0.20), Eigen::Vector3d(0.80, 0.75, 0.30)},
    {Eigen::Vector3d(0.25, 0.45, 0.85), Eigen::Vector3d(0.30, 0.75, 0.70), Eigen::Vector3d(0.50, 0.40, 0.85)},
}};

std::string scene_id(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%04d", index);
    return buf;
}

}  // namespace

void SceneSpec::validate() const {
    if (spheres.empty() || static_cast<int>(spheres.size()) > kMaxObjects) {
        throw InvalidInput("scene must hold between 1 and 8 objects");
    }
    for (const auto& s : spheres) {
        if (!(s.radius > 0.0) || !s.center.allFinite()) {
            throw InvalidInput("sphere radius must be positive and its center finite");
        }
    }
    if (num_classes < 1 || descriptor_class < 0 || descriptor_class >= num_classes) {
        throw InvalidInput("descriptor class out of range");
    }
    if (!(ground.checker_scale > 0.0) || !(ground.extent_radius > 0.0)) {
        throw InvalidInput("ground plane scale and extent must be positive");
    }
}

Json SceneSpec::to_json() const {
    Json objs = Json::array();
    for (const auto& s : spheres) {
        objs.push_back({{"type", "sphere"}, {"center", vec_json(s.center)}, {"radius", s.radius}, {"albedo", vec_json(s.albedo)}});
    }
    return Json{{"seed", seed},
                {"objects", objs},
                {"ground",
                 {{"height", ground.height},
                  {"color_a", vec_json(ground.color_a)},
                  {"color_b", vec_json(ground.color_b)},
                  {"checker_scale", ground.checker_scale},
                  {"extent_radius", ground.extent_radius}}},
                {"descriptor_class", descriptor_class},
                {"num_classes", num_classes}};
}

SceneSpec SceneSpec::from_json(const Json& j) {
    SceneSpec s;
    s.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& o : j.at("objects")) {
        s.spheres.push_back({json_vec(o.at("center")), o.at("radius").get<double>(), json_vec(o.at("albedo"))});
    }
    const auto& g = j.at("ground");
    s.ground.height = g.at("height").get<double>();
    s.ground.color_a = json_vec(g.at("color_a"));
    s.ground.color_b = json_vec(g.at("color_b"));
    s.ground.checker_scale = g.at("checker_scale").get<double>();
    s.ground.extent_radius = g.at("extent_radius").get<double>();
    s.descriptor_class = j.at("descriptor_class").get<int>();
    s.num_classes = j.at("num_classes").get<int>();
    s.validate();
    return s;
}

std::vector<Trajectory::WorldCamera> Trajectory::cameras() const {
    std::vector<WorldCamera> cams;
    cams.reserve(frame_count);
    const double span = span_deg * kPi / 180.0;
    for (int i = 0; i < frame_count; ++i) {
        const double s = frame_count > 1 ? static_cast<double>(i) / (frame_count - 1) : 0.0;
        double angle = start_angle;
        double r = radius;
        double h = height;
        switch (kind) {
            case TrajectoryKind::Orbit:
                angle += span * s;
                break;
            case TrajectoryKind::Arc:
                angle += span * s;
                h += rise * std::sin(kPi * s);
                break;
            case TrajectoryKind::Dolly:
                r *= 1.0 - dolly_fraction * s;
                h = target.y() + (height - target.y()) * (1.0 - dolly_fraction * s);
                break;
        }
        const Eigen::Vector3d eye(target.x() + r * std::cos(angle), h, target.z() + r * std::sin(angle));
        cams.push_back({look_at(eye, target), eye});
    }
    return cams;
}

void Trajectory::validate() const {
    if (frame_count < 1) {
        throw InvalidInput("trajectory needs at least one frame");
    }
    if (!(radius > 0.0) || !(fov > 0.0 && fov < kPi)) {
        throw InvalidInput("trajectory radius must be positive and fov in (0, pi)");
    }
    if (kind == TrajectoryKind::Dolly && !(dolly_fraction > 0.0 && dolly_fraction < 1.0)) {
        throw InvalidInput("dolly fraction must lie in (0, 1)");
    }
    if (kind != TrajectoryKind::Dolly && frame_count > 1 && !(std::abs(span_deg) > 0.0)) {
        throw InvalidInput("orbit and arc trajectories need a nonzero angular span");
    }
    const auto cams = cameras();
    for (size_t i = 1; i < cams.size(); ++i) {
        if (!((cams[i].eye - cams[i - 1].eye).norm() > 0.0)) {
            throw InvalidInput("consecutive camera centers coincide");
        }
    }
    for (const auto& c : cams) {
        const Eigen::Vector3d horizontal(c.eye.x() - target.x(), 0.0, c.eye.z() - target.z());
        if (horizontal.norm() < 1e-9) {
            throw InvalidInput("camera directly above the target has an undefined look-at frame");
        }
    }
}

Json Trajectory::to_json() const {
    return Json{{"kind", kind_name(kind)},   {"frame_count", frame_count},     {"radius", radius},
                {"height", height},          {"span_deg", span_deg},           {"start_angle", start_angle},
                {"rise", rise},              {"dolly_fraction", dolly_fraction}, {"fov", fov},
                {"target", vec_json(target)}};
}

Trajectory Trajectory::from_json(const Json& j) {
    Trajectory t;
    t.kind = kind_from_name(j.at("kind").get<std::string>());
    t.frame_count = j.at("frame_count").get<int>();
    t.radius = j.at("radius").get<double>();
    t.height = j.at("height").get<double>();
    t.span_deg = j.at("span_deg").get<double>();
    t.start_angle = j.at("start_angle").get<double>();
    t.rise = j.at("rise").get<double>();
    t.dolly_fraction = j.at("dolly_fraction").get<double>();
    t.fov = j.at("fov").get<double>();
    t.target = json_vec(j.at("target"));
    t.validate();
    return t;
}

Image RenderedSequence::frame(int i) const {
    Image img(height, width, 3);
    const size_t n = pixels_per_frame() * 3;
    std::copy_n(images.begin() + static_cast<std::ptrdiff_t>(i * n), n, img.data.begin());
    return img;
}

DepthMap RenderedSequence::depth(int i) const {
    DepthMap d(height, width);
    const size_t n = pixels_per_frame();
    for (size_t k = 0; k < n; ++k) {
        d.values[k] = depths[i * n + k];
        d.valid[k] = validity[i * n + k];
    }
    return d;
}

PointCloud RenderedSequence::valid_points() const {
    PointCloud cloud;
    const size_t total = static_cast<size_t>(frames) * pixels_per_frame();
    for (size_t k = 0; k < total; ++k) {
        if (!validity[k]) {
            continue;
        }
        cloud.points.emplace_back(pointmaps[3 * k], pointmaps[3 * k + 1], pointmaps[3 * k + 2]);
        cloud.colors.emplace_back(images[3 * k], images[3 * k + 1], images[3 * k + 2]);
    }
    return cloud;
}

void RenderedSequence::check_invariants(double tolerance) const {
    const size_t n = pixels_per_frame();
    const size_t total = static_cast<size_t>(frames) * n;
    if (images.size() != 3 * total || depths.size() != total || validity.size() != total ||
        pointmaps.size() != 3 * total || static_cast<int>(cameras.size()) != frames) {
        throw InvalidInput("rendered sequence buffers have inconsistent sizes");
    }
    for (int i = 0; i < frames; ++i) {
        const DepthMap d = depth(i);
        for (size_t k = 0; k < n; ++k) {
            if (d.valid[k] && !(d.values[k] > 0.0 && std::isfinite(d.values[k]))) {
                throw InvalidInput("valid depth must be positive and finite");
            }
        }
        const PointCloud pts = unproject_depth(d, cameras[i], {height, width});
        size_t j = 0;
        for (size_t k = 0; k < n; ++k) {
            if (!d.valid[k]) {
                continue;
            }
            const size_t g = i * n + k;
            const Eigen::Vector3d p(pointmaps[3 * g], pointmaps[3 * g + 1], pointmaps[3 * g + 2]);
            if ((pts.points[j] - p).norm() > tolerance * std::max(1.0, p.norm())) {
                throw InvalidInput("pointmap disagrees with unprojected depth");
            }
            ++j;
        }
    }
}

RenderedSequence render_sequence(const SceneSpec& spec, const Trajectory& traj, std::pair<int, int> resolution) {
    spec.validate();
    traj.validate();
    const auto [height, width] = resolution;
    if (height < 1 || width < 1) {
        throw InvalidInput("resolution must be positive");
    }
    const auto cams = traj.cameras();
    for (const auto& c : cams) {
        if (c.eye.y() <= spec.ground.height) {
            throw InvalidInput("trajectory places a camera below the ground plane");
        }
        for (const auto& s : spec.spheres) {
            if ((c.eye - s.center).norm() <= s.radius) {
                throw InvalidInput("trajectory places a camera inside an object");
            }
        }
    }

    RenderedSequence seq;
    seq.frames = traj.frame_count;
    seq.height = height;
    seq.width = width;
    seq.descriptor_class = spec.descriptor_class;
    const size_t n = seq.pixels_per_frame();
    const size_t total = n * seq.frames;
    seq.images.assign(3 * total, 0.0f);
    seq.depths.assign(total, 0.0f);
    seq.validity.assign(total, 0);
    seq.pointmaps.assign(3 * total, 0.0f);
    seq.labels.assign(total, kSkyLabel);

    const double fx = (width / 2.0) / std::tan(traj.fov / 2.0);
    const double fy = (height / 2.0) / std::tan(traj.fov / 2.0);
    const double cx = (width - 1) / 2.0;
    const double cy = (height - 1) / 2.0;
    const Eigen::Vector3d light = Eigen::Vector3d(0.4, 0.8, 0.3).normalized();
    const Eigen::Matrix3d r0 = cams[0].rotation;
    const Eigen::Vector3d eye0 = cams[0].eye;

    for (int f = 0; f < seq.frames; ++f) {
        const Eigen::Matrix3d& rot = cams[f].rotation;
        const Eigen::Vector3d& eye = cams[f].eye;
        CameraPose pose;
        pose.rotation = Eigen::Quaterniond(r0.transpose() * rot).normalized();
        if (pose.rotation.w() < 0.0) {
            pose.rotation.coeffs() *= -1.0;
        }
        pose.translation = r0.transpose() * (eye - eye0);
        pose.fov = Eigen::Vector2d(traj.fov, traj.fov);
        seq.cameras.push_back(pose);
        // Render through the stored (relative) pose so depth and pointmaps agree with it exactly.
        const Eigen::Matrix3d rel = pose.rotation_matrix();
        const Eigen::Matrix3d world_rot = r0 * rel;

        for (int v = 0; v < height; ++v) {
            for (int u = 0; u < width; ++u) {
                const Eigen::Vector3d dc((u - cx) / fx, (v - cy) / fy, 1.0);
                const Eigen::Vector3d dcn = dc.normalized();
                const Eigen::Vector3d dir = world_rot * dcn;

                double best = std::numeric_limits<double>::infinity();
                Eigen::Vector3d albedo = Eigen::Vector3d::Zero();
                Eigen::Vector3d normal = Eigen::Vector3d::Zero();
                std::uint8_t label = kSkyLabel;

                if (dir.y() != 0.0) {
                    const double t = (spec.ground.height - eye.y()) / dir.y();
                    const Eigen::Vector3d hit = eye + t * dir;
                    if (t > kHitEpsilon && std::hypot(hit.x(), hit.z()) < spec.ground.extent_radius) {
                        best = t;
                        const double s = spec.ground.checker_scale;
                        const auto parity = static_cast<long long>(std::floor(hit.x() / s) + std::floor(hit.z() / s));
                        albedo = (parity % 2 == 0) ? spec.ground.color_a : spec.ground.color_b;
                        normal = Eigen::Vector3d(0.0, 1.0, 0.0);
                        label = 0;
                    }
                }
                for (size_t k = 0; k < spec.spheres.size(); ++k) {
                    const Sphere& sp = spec.spheres[k];
                    const Eigen::Vector3d oc = eye - sp.center;
                    const double b = dir.dot(oc);
                    const double disc = b * b - (oc.squaredNorm() - sp.radius * sp.radius);
                    if (disc < 0.0) {
                        continue;
                    }
                    const double t = -b - std::sqrt(disc);
                    if (t > kHitEpsilon && t < best) {
                        best = t;
                        albedo = sp.albedo;
                        normal = (eye + t * dir - sp.center) / sp.radius;
                        label = static_cast<std::uint8_t>(k + 1);
                    }
                }

                const size_t pix = f * n + static_cast<size_t>(v) * width + u;
                Eigen::Vector3d color;
                if (std::isfinite(best)) {
                    const double shade = 0.3 + 0.7 * std::max(0.0, normal.dot(light));
                    color = albedo * shade;
                    const double z = best * dcn.z();
                    const Eigen::Vector3d p = rel * (z * dc) + pose.translation;
                    seq.depths[pix] = static_cast<float>(z);
                    seq.validity[pix] = 1;
                    for (int c = 0; c < 3; ++c) {
                        seq.pointmaps[3 * pix + c] = static_cast<float>(p[c]);
                    }
                } else {
                    const double up = std::clamp(-dir.y(), 0.0, 1.0);
                    color = Eigen::Vector3d(0.45, 0.60, 0.85) + up * Eigen::Vector3d(0.25, 0.20, 0.10);
                }
                seq.labels[pix] = label;
                for (int c = 0; c < 3; ++c) {
                    seq.images[3 * pix + c] = static_cast<float>(std::clamp(color[c], 0.0, 1.0));
                }
            }
        }
    }
    return seq;
}

SceneSpec sample_scene_spec(Rng& rng, std::uint64_t seed, int num_classes) {
    if (num_classes < 1) {
        throw InvalidInput("num_classes must be positive");
    }
    SceneSpec spec;
    spec.seed = seed;
    spec.num_classes = num_classes;
    spec.descriptor_class = static_cast<int>(rng.below(static_cast<std::uint64_t>(num_classes)));
    static constexpr std::array<int, 4> kCounts = {1, 2, 4, 6};
    const int count = kCounts[spec.descriptor_class % 4];
    const auto& palette = kPalettes[(spec.descriptor_class / 4) % 2];
    for (int i = 0; i < count; ++i) {
        Sphere s;
        for (int attempt = 0; attempt < 100; ++attempt) {
            s.radius = rng.uniform(0.35, 0.8);
            const double a = rng.uniform(0.0, 2.0 * kPi);
            const double d = rng.uniform(0.0, 1.8);
            s.center = Eigen::Vector3d(d * std::cos(a), s.radius, d * std::sin(a));
            const bool clear = std::all_of(spec.spheres.begin(), spec.spheres.end(), [&](const Sphere& o) {
                return (s.center - o.center).norm() > s.radius + o.radius + 0.05;
            });
            if (clear) {
                break;
            }
        }
        const Eigen::Vector3d base = palette[rng.below(3)];
        s.albedo = (base * rng.uniform(0.8, 1.1)).cwiseMin(1.0).cwiseMax(0.0);
        spec.spheres.push_back(s);
    }
    return spec;
}

Trajectory sample_trajectory(Rng& rng, int frame_count) {
    Trajectory t;
    t.kind = TrajectoryKind::Orbit;
    t.frame_count = frame_count;
    t.radius = rng.uniform(4.5, 6.0);
    t.height = rng.uniform(1.5, 2.8);
    t.span_deg = rng.uniform(50.0, 100.0);
    t.start_angle = rng.uniform(0.0, 2.0 * kPi);
    return t;
}

fs::path DatasetHandle::scene_dir(const std::string& id) const {
    const bool is_test = std::find(test.begin(), test.end(), id) != test.end();
    return root / (is_test ? "test" : "train") / id;
}

std::vector<std::string> DatasetHandle::scenes(const std::vector<std::string>& splits) const {
    std::vector<std::string> out;
    for (const auto& s : splits) {
        const auto& src = s == "test" ? test : train;
        if (s != "test" && s != "train") {
            throw InvalidInput("unknown split " + s);
        }
        out.insert(out.end(), src.begin(), src.end());
    }
    return out;
}

int test_scene_count(int count) { return static_cast<int>(std::lround(0.1 * count)); }

void write_sequence(const fs::path& dir, const RenderedSequence& seq, const SceneSpec& spec, const Trajectory& traj) {
    fs::create_directories(dir);
    for (int i = 0; i < seq.frames; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%03d.png", i);
        write_png(dir / name, seq.frame(i));
    }
    const std::int64_t n = seq.frames, h = seq.height, w = seq.width;
    write_blob(dir / "depth.bin", std::span<const float>(seq.depths), {n, h, w});
    write_blob(dir / "validity.bin", std::span<const std::uint8_t>(seq.validity), {n, h, w});
    write_blob(dir / "labels.bin", std::span<const std::uint8_t>(seq.labels), {n, h, w});
    write_blob(dir / "pointmaps.bin", std::span<const float>(seq.pointmaps), {n, h, w, 3});
    write_poses(dir / "poses.json", seq.cameras);
    write_json(dir / "spec.json", Json{{"scene", spec.to_json()}, {"trajectory", traj.to_json()}});
}

RenderedSequence load_sequence(const fs::path& dir) {
    const Json meta = read_json(dir / "spec.json");
    const Blob depth = read_blob(dir / "depth.bin");
    const Blob valid = read_blob(dir / "validity.bin");
    const Blob points = read_blob(dir / "pointmaps.bin");
    if (depth.shape.size() != 3 || depth.dtype != "float32" || valid.dtype != "uint8" || points.dtype != "float32") {
        throw InvalidInput("unexpected blob layout in " + dir.string());
    }
    RenderedSequence seq;
    seq.frames = static_cast<int>(depth.shape[0]);
    seq.height = static_cast<int>(depth.shape[1]);
    seq.width = static_cast<int>(depth.shape[2]);
    seq.descriptor_class = meta.at("scene").at("descriptor_class").get<int>();
    seq.depths = depth.f32;
    seq.validity = valid.u8;
    seq.pointmaps = points.f32;
    if (fs::exists(dir / "labels.bin")) {
        seq.labels = read_blob(dir / "labels.bin").u8;
    }
    seq.cameras = read_poses(dir / "poses.json");
    seq.images.reserve(seq.pixels_per_frame() * 3 * seq.frames);
    for (int i = 0; i < seq.frames; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%03d.png", i);
        const Image img = read_png(dir / name);
        if (img.height != seq.height || img.width != seq.width || img.channels != 3) {
            throw InvalidInput("frame size does not match depth blob in " + dir.string());
        }
        seq.images.insert(seq.images.end(), img.data.begin(), img.data.end());
    }
    return seq;
}

SampledScene sample_scene(std::uint64_t seed, std::pair<int, int> resolution, int frame_count) {
    Rng rng(seed);
    SampledScene out;
    out.spec = sample_scene_spec(rng, seed);
    out.trajectory = sample_trajectory(rng, frame_count);
    out.sequence = render_sequence(out.spec, out.trajectory, resolution);
    out.sequence.check_invariants();
    return out;
}

void quantize_images(RenderedSequence& seq) {
    for (auto& v : seq.images) {
        v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
    }
}

DatasetHandle make_dataset(const fs::path& root, int count, std::uint64_t seed, std::pair<int, int> resolution,
                           int frame_count) {
    if (count < 1) {
        throw InvalidInput("dataset needs at least one scene");
    }
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec || !fs::is_directory(root)) {
        throw std::runtime_error("cannot create dataset directory " + root.string());
    }
    DatasetHandle handle;
    handle.root = root;
    const int n_test = test_scene_count(count);
    handle.small_split_warning = n_test == 0;

    Json scenes = Json::array();
    for (int i = 0; i < count; ++i) {
        const SampledScene sampled = sample_scene(mix_seed(seed, static_cast<std::uint64_t>(i)), resolution, frame_count);
        const SceneSpec& spec = sampled.spec;
        const Trajectory& traj = sampled.trajectory;
        const RenderedSequence& seq = sampled.sequence;
        const std::string id = scene_id(i);
        const bool is_test = i >= count - n_test;
        (is_test ? handle.test : handle.train).push_back(id);
        write_sequence(root / (is_test ? "test" : "train") / id, seq, spec, traj);
        scenes.push_back({{"id", id}, {"split", is_test ? "test" : "train"}, {"descriptor_class", spec.descriptor_class}});
    }
    Json manifest{{"schema_version", 1},
                  {"seed", seed},
                  {"count", count},
                  {"resolution", {resolution.first, resolution.second}},
                  {"frame_count", frame_count},
                  {"scenes", scenes},
                  {"train", handle.train},
                  {"test", handle.test}};
    if (handle.small_split_warning) {
        manifest["warning"] = "dataset too small for a held-out split; all scenes are in train";
    }
    write_json(root / "manifest.json", manifest);
    return handle;
}

DatasetHandle open_dataset(const fs::path& root) {
    const Json manifest = read_json(root / "manifest.json");
    DatasetHandle handle;
    handle.root = root;
    handle.train = manifest.at("train").get<std::vector<std::string>>();
    handle.test = manifest.at("test").get<std::vector<std::string>>();
    handle.small_split_warning = manifest.contains("warning");
    return handle;
}

}  // namespace geolat
