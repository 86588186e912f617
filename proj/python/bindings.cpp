#include "geolat/cli.hpp"
#include "geolat/errors.hpp"
#include "geolat/evaluation.hpp"
#include "geolat/pipeline.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

namespace py = pybind11;
using namespace geolat;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

py::object to_py(const Json& j) {
    return py::module_::import("json").attr("loads")(j.dump());
}

PointCloud cloud_from(const DoubleArray& a) {
    if (a.ndim() != 2 || a.shape(1) != 3) {
        throw InvalidInput("points must have shape (n, 3)");
    }
    PointCloud c;
    const auto r = a.unchecked<2>();
    c.points.reserve(static_cast<size_t>(a.shape(0)));
    for (py::ssize_t i = 0; i < a.shape(0); ++i) {
        c.points.emplace_back(r(i, 0), r(i, 1), r(i, 2));
    }
    return c;
}

py::array_t<double> points_to(const PointCloud& c) {
    py::array_t<double> out({static_cast<py::ssize_t>(c.size()), py::ssize_t{3}});
    auto w = out.mutable_unchecked<2>();
    for (size_t i = 0; i < c.size(); ++i) {
        for (int k = 0; k < 3; ++k) w(i, k) = c.points[i][k];
    }
    return out;
}

std::vector<CameraPose> cameras_from(const DoubleArray& a) {
    if (a.ndim() != 2 || a.shape(1) != CameraPose::kVectorSize) {
        throw InvalidInput("cameras must have shape (n, 9)");
    }
    std::vector<CameraPose> cams;
    for (py::ssize_t i = 0; i < a.shape(0); ++i) {
        cams.push_back(CameraPose::from_vector(std::span<const double>(a.data(i, 0), CameraPose::kVectorSize)));
    }
    return cams;
}

py::array_t<double> cameras_to(const std::vector<CameraPose>& cams) {
    py::array_t<double> out({static_cast<py::ssize_t>(cams.size()), py::ssize_t{CameraPose::kVectorSize}});
    auto w = out.mutable_unchecked<2>();
    for (size_t i = 0; i < cams.size(); ++i) {
        const auto v = cams[i].to_vector();
        for (int k = 0; k < CameraPose::kVectorSize; ++k) w(i, k) = v[k];
    }
    return out;
}

Image image_from(const FloatArray& a) {
    if (a.ndim() != 3 || a.shape(2) != 3) {
        throw InvalidInput("images must have shape (h, w, 3)");
    }
    Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), 3);
    std::copy(a.data(), a.data() + a.size(), img.data.begin());
    return img;
}

template <typename T>
py::array_t<T> array_of(const std::vector<T>& v, std::vector<py::ssize_t> shape) {
    py::array_t<T> out(shape);
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

py::dict transform_to(const SimilarityTransform& t) {
    py::dict d;
    d["scale"] = t.scale;
    py::array_t<double> r({3, 3});
    auto w = r.mutable_unchecked<2>();
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) w(i, j) = t.rotation(i, j);
    }
    d["rotation"] = r;
    d["translation"] = py::array_t<double>(3, t.translation.data());
    return d;
}

py::dict sequence_to(const RenderedSequence& s) {
    const py::ssize_t n = s.frames, h = s.height, w = s.width;
    py::dict d;
    d["images"] = array_of(s.images, {n, h, w, 3});
    d["depths"] = array_of(s.depths, {n, h, w});
    d["validity"] = array_of(s.validity, {n, h, w}).attr("astype")("bool");
    d["pointmaps"] = array_of(s.pointmaps, {n, h, w, 3});
    d["cameras"] = cameras_to(s.cameras);
    d["descriptor"] = s.descriptor_class;
    return d;
}

std::vector<Image> images_from(const std::vector<FloatArray>& arrays) {
    std::vector<Image> out;
    for (const auto& a : arrays) out.push_back(image_from(a));
    return out;
}

GenerateRequest request_from(const std::vector<FloatArray>& images, const std::optional<DoubleArray>& cameras,
                             std::optional<int> descriptor, const std::string& scene) {
    GenerateRequest req;
    req.images = images_from(images);
    if (cameras) req.cameras = cameras_from(*cameras);
    req.descriptor = descriptor;
    req.scene = scene;
    return req;
}

SamplerOptions sampler_from(const Pipeline& pipe, std::optional<int> steps, std::optional<double> cfg,
                            std::optional<std::uint64_t> seed) {
    SamplerOptions s = pipe.config().sampler;
    if (steps) s.steps = *steps;
    if (cfg) s.cfg_scale = *cfg;
    if (seed) s.seed = *seed;
    return s;
}

py::dict record_to(const StageRecord& r) {
    py::dict d;
    d["stage"] = r.stage;
    d["status"] = r.status;
    d["config_hash"] = r.config_hash;
    d["parameter_hash"] = r.parameter_hash;
    d["metrics"] = to_py(r.metrics);
    d["duration_s"] = r.duration_s;
    return d;
}

}  // namespace

PYBIND11_MODULE(_geolat, m) {
    m.doc() = "Joint appearance and geometry latent generation on synthetic desk scenes";

    py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);
    py::register_exception<DegenerateConfiguration>(m, "DegenerateConfiguration", PyExc_RuntimeError);
    py::register_exception<MissingPrerequisite>(m, "MissingPrerequisite", PyExc_RuntimeError);
    py::register_exception<ConfigMismatch>(m, "ConfigMismatch", PyExc_RuntimeError);
    py::register_exception<Divergence>(m, "Divergence", PyExc_RuntimeError);

    m.def("camera_vector_order", [] {
        std::vector<std::string> names;
        for (const char* n : camera_vector_order()) names.emplace_back(n);
        return names;
    });

    m.def("sample_scene", [](std::uint64_t seed, int resolution, int frames) {
        return sequence_to(sample_scene(seed, {resolution, resolution}, frames).sequence);
    }, py::arg("seed"), py::arg("resolution") = 64, py::arg("frames") = 9);

    m.def("make_dataset", [](const std::filesystem::path& root, int count, std::uint64_t seed, int resolution,
                             int frames) {
        const DatasetHandle h = make_dataset(root, count, seed, {resolution, resolution}, frames);
        py::dict d;
        d["root"] = h.root;
        d["train"] = h.train;
        d["test"] = h.test;
        d["small_split_warning"] = h.small_split_warning;
        return d;
    }, py::arg("root"), py::arg("count") = 8, py::arg("seed") = 7, py::arg("resolution") = 64, py::arg("frames") = 9);

    m.def("load_scene", [](const std::filesystem::path& dir) { return sequence_to(load_sequence(dir)); },
          py::arg("scene_dir"));

    m.def("umeyama_align", [](const DoubleArray& src, const DoubleArray& dst) {
        return transform_to(umeyama_align(cloud_from(src), cloud_from(dst)));
    }, py::arg("src"), py::arg("dst"));

    m.def("farthest_point_sample", [](const DoubleArray& points, size_t k, size_t start) {
        return farthest_point_sample(cloud_from(points), k, start);
    }, py::arg("points"), py::arg("k"), py::arg("start_index") = 0);

    m.def("chamfer_metrics", [](const DoubleArray& pred, const DoubleArray& gt) {
        const ChamferResult r = chamfer_metrics(cloud_from(pred), cloud_from(gt));
        py::dict d;
        d["accuracy"] = r.accuracy;
        d["completeness"] = r.completeness;
        d["chamfer"] = r.chamfer;
        return d;
    }, py::arg("pred"), py::arg("gt"));

    m.def("evaluate_geometry", [](const DoubleArray& pred, const DoubleArray& gt, size_t sample_k) {
        const GeometryEvaluation e = evaluate_geometry(cloud_from(pred), cloud_from(gt), sample_k);
        py::dict d = transform_to(e.alignment);
        d["accuracy"] = e.metrics.accuracy;
        d["completeness"] = e.metrics.completeness;
        d["chamfer"] = e.metrics.chamfer;
        return d;
    }, py::arg("pred"), py::arg("gt"), py::arg("sample_k") = kDeskSampleCount);

    m.def("relative_pose_errors", [](const DoubleArray& pred, const DoubleArray& gt) {
        const auto p = cameras_from(pred);
        const auto g = cameras_from(gt);
        const PoseErrors e = relative_pose_errors(p, g);
        py::array_t<double> out({static_cast<py::ssize_t>(e.pairs.size()), py::ssize_t{4}});
        auto w = out.mutable_unchecked<2>();
        for (size_t i = 0; i < e.pairs.size(); ++i) {
            w(i, 0) = e.pairs[i].i;
            w(i, 1) = e.pairs[i].j;
            w(i, 2) = e.pairs[i].rotation_deg;
            w(i, 3) = e.pairs[i].translation_deg;
        }
        return out;
    }, py::arg("pred"), py::arg("gt"), "Rows of (i, j, rotation_deg, translation_deg).");

    m.def("pose_auc", [](const DoubleArray& pred, const DoubleArray& gt, double threshold) {
        const auto p = cameras_from(pred);
        const auto g = cameras_from(gt);
        return auc_at_threshold(relative_pose_errors(p, g).pairs, threshold);
    }, py::arg("pred"), py::arg("gt"), py::arg("threshold_deg") = kAucThresholdDeg);

    m.def("psnr", [](const FloatArray& pred, const FloatArray& gt) {
        return psnr(std::span<const float>(pred.data(), pred.size()), std::span<const float>(gt.data(), gt.size()));
    }, py::arg("pred"), py::arg("gt"));

    m.def("evaluate_directory", [](const std::filesystem::path& pred, const std::filesystem::path& gt,
                                   size_t sample_k, const std::optional<std::filesystem::path>& out) {
        const MetricReport r = evaluate_directory(pred, gt, sample_k);
        if (out) r.write(*out);
        return to_py(r.to_json());
    }, py::arg("pred"), py::arg("gt"), py::arg("sample_k") = kDeskSampleCount, py::arg("out") = py::none());

    m.def("load_config", [](const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides) {
        return to_py(ExperimentConfig::load(file, overrides).to_json());
    }, py::arg("path") = py::none(), py::arg("overrides") = std::vector<std::string>{});

    m.def("config_hash", [](const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides) {
        return ExperimentConfig::load(file, overrides).hash();
    }, py::arg("path") = py::none(), py::arg("overrides") = std::vector<std::string>{});

    m.def("cli", [](const std::vector<std::string>& args) {
        std::vector<const char*> argv{"geolat"};
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int code = 0;
        {
            py::gil_scoped_release release;
            code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
    }, py::arg("args"), "Runs the geolat tool in-process and returns (exit_code, stdout, stderr).");

    py::class_<GenerationResult>(m, "GenerationResult")
        .def_property_readonly("frames", [](const GenerationResult& r) {
            const auto n = static_cast<py::ssize_t>(r.frames.size());
            const py::ssize_t h = n ? r.frames[0].height : 0, w = n ? r.frames[0].width : 0;
            py::array_t<float> out({n, h, w, py::ssize_t{3}});
            float* dst = out.mutable_data();
            for (const auto& f : r.frames) dst = std::copy(f.data.begin(), f.data.end(), dst);
            return out;
        })
        .def_property_readonly("depths", [](const GenerationResult& r) {
            const auto n = static_cast<py::ssize_t>(r.depths.size());
            const py::ssize_t h = n ? r.depths[0].height : 0, w = n ? r.depths[0].width : 0;
            py::array_t<double> depth({n, h, w});
            py::array_t<bool> valid({n, h, w});
            double* dd = depth.mutable_data();
            bool* vd = valid.mutable_data();
            for (const auto& d : r.depths) {
                dd = std::copy(d.values.begin(), d.values.end(), dd);
                for (auto v : d.valid) *vd++ = v != 0;
            }
            return py::make_tuple(depth, valid);
        }, "Tuple of (depth, validity) arrays of shape (n, h, w).")
        .def_property_readonly("cameras", [](const GenerationResult& r) { return cameras_to(r.cameras); })
        .def_property_readonly("points", [](const GenerationResult& r) { return points_to(r.cloud); })
        .def_property_readonly("provenance", [](const GenerationResult& r) { return to_py(r.provenance); })
        .def("final_geometry_deviation", &final_geometry_deviation)
        .def("write", [](const GenerationResult& r, const std::filesystem::path& dir) { write_result(dir, r); },
             py::arg("dir"));

    m.def("read_result", &read_result, py::arg("dir"));

    py::class_<Pipeline>(m, "Pipeline")
        .def(py::init([](const std::optional<std::filesystem::path>& config, const std::vector<std::string>& overrides) {
                 return Pipeline(ExperimentConfig::load(config, overrides));
             }),
             py::arg("config") = py::none(), py::arg("overrides") = std::vector<std::string>{})
        .def_property_readonly("config", [](const Pipeline& p) { return to_py(p.config().to_json()); })
        .def_property_readonly("config_hash", [](const Pipeline& p) { return p.config().hash(); })
        .def("stage_complete", [](const Pipeline& p, const std::string& s) { return p.stage_complete(stage_from_name(s)); },
             py::arg("stage"))
        .def("run_stage", [](Pipeline& p, const std::string& s, bool force) {
            StageRecord rec;
            {
                py::gil_scoped_release release;
                rec = p.run_stage(stage_from_name(s), force);
            }
            return record_to(rec);
        }, py::arg("stage"), py::arg("force") = false)
        .def("generate", [](Pipeline& p, const std::vector<FloatArray>& images, const std::optional<DoubleArray>& cameras,
                            std::optional<int> descriptor, const std::string& scene, std::optional<int> steps,
                            std::optional<double> cfg, std::optional<std::uint64_t> seed) {
            const GenerateRequest req = request_from(images, cameras, descriptor, scene);
            const SamplerOptions s = sampler_from(p, steps, cfg, seed);
            py::gil_scoped_release release;
            return p.generate(req, s);
        }, py::arg("images"), py::arg("cameras") = py::none(), py::arg("descriptor") = py::none(),
           py::arg("scene") = "", py::arg("steps") = py::none(), py::arg("cfg") = py::none(), py::arg("seed") = py::none())
        .def("two_stage_baseline", [](Pipeline& p, const std::vector<FloatArray>& images,
                                      const std::optional<DoubleArray>& cameras, std::optional<int> descriptor,
                                      const std::string& scene, std::optional<int> steps, std::optional<double> cfg,
                                      std::optional<std::uint64_t> seed) {
            const GenerateRequest req = request_from(images, cameras, descriptor, scene);
            const SamplerOptions s = sampler_from(p, steps, cfg, seed);
            py::gil_scoped_release release;
            return p.two_stage_baseline(req, s);
        }, py::arg("images"), py::arg("cameras") = py::none(), py::arg("descriptor") = py::none(),
           py::arg("scene") = "", py::arg("steps") = py::none(), py::arg("cfg") = py::none(), py::arg("seed") = py::none())
        .def("reconstruct", [](Pipeline& p, const std::vector<FloatArray>& frames, std::optional<int> descriptor,
                               const std::string& scene, std::optional<int> steps, std::optional<double> cfg,
                               std::optional<std::uint64_t> seed) {
            const std::vector<Image> imgs = images_from(frames);
            const SamplerOptions s = sampler_from(p, steps, cfg, seed);
            py::gil_scoped_release release;
            return p.reconstruct(imgs, descriptor, scene, s);
        }, py::arg("frames"), py::arg("descriptor") = py::none(), py::arg("scene") = "", py::arg("steps") = py::none(),
           py::arg("cfg") = py::none(), py::arg("seed") = py::none())
        .def("surrogate_reconstruction", [](Pipeline& p, const std::vector<FloatArray>& frames, const std::string& scene) {
            const std::vector<Image> imgs = images_from(frames);
            py::gil_scoped_release release;
            return p.surrogate_reconstruction(imgs, scene);
        }, py::arg("frames"), py::arg("scene") = "")
        .def("inspect_latents", [](Pipeline& p, const std::string& stage) {
            LatentGateReport rep;
            {
                py::gil_scoped_release release;
                rep = p.inspect_latents(stage_from_name(stage));
            }
            return to_py(rep.to_json());
        }, py::arg("stage") = "adapter");
}
