#include "geolat/cli.hpp"

#include "geolat/errors.hpp"
#include "geolat/pipeline.hpp"
#include "geolat/plots.hpp"

#include <CLI11.hpp>

#include <iomanip>
#include <iostream>
#include <ostream>

namespace geolat {

namespace fs = std::filesystem;

namespace {

struct CommonOptions {
    std::string config;
    std::vector<std::string> overrides;
    std::string run_dir;
    std::string data_root;

    ExperimentConfig load() const {
        std::vector<std::string> all = overrides;
        if (!run_dir.empty()) {
            all.push_back("run_dir=\"" + run_dir + "\"");
        }
        if (!data_root.empty()) {
            all.push_back("data.root=\"" + data_root + "\"");
        }
        return ExperimentConfig::load(config.empty() ? std::nullopt : std::optional<fs::path>(config), all);
    }
};

void add_common(CLI::App* cmd, CommonOptions& c) {
    cmd->add_option("--config", c.config, "experiment config JSON")->check(CLI::ExistingFile);
    cmd->add_option("--set", c.overrides, "override a config key, e.g. --set adapter.lambda2=0.1");
    cmd->add_option("--run-dir", c.run_dir, "directory holding stage artifacts");
    cmd->add_option("--data-root", c.data_root, "dataset root (default: $GEN3R_DATA_DIR or data/desk)");
}

struct SamplerFlags {
    std::optional<int> steps;
    std::optional<double> cfg;
    std::optional<std::uint64_t> seed;

    SamplerOptions resolve(const ExperimentConfig& c) const {
        SamplerOptions s = c.sampler;
        if (steps) s.steps = *steps;
        if (cfg) s.cfg_scale = *cfg;
        if (seed) s.seed = *seed;
        return s;
    }
};

void add_sampler(CLI::App* cmd, SamplerFlags& s) {
    cmd->add_option("--steps", s.steps, "Euler steps");
    cmd->add_option("--cfg", s.cfg, "classifier-free guidance scale");
    cmd->add_option("--seed", s.seed, "sampling seed");
}

struct SceneSelection {
    std::vector<std::string> scenes;
    std::vector<std::string> splits;
};

void add_scene_selection(CLI::App* cmd, SceneSelection& s) {
    cmd->add_option("--scene", s.scenes, "dataset scene id (repeatable)");
    cmd->add_option("--split", s.splits, "every scene of a dataset split (repeatable)");
}

std::vector<std::string> selected_scenes(const ExperimentConfig& c, const SceneSelection& sel) {
    const DatasetHandle handle = open_dataset(c.data.root);
    std::vector<std::string> ids = sel.scenes;
    const auto from_splits = handle.scenes(sel.splits);
    ids.insert(ids.end(), from_splits.begin(), from_splits.end());
    return ids;
}

void print_record(std::ostream& out, const StageRecord& r) {
    out << std::left << std::setw(14) << r.stage << ' ' << std::setw(9) << r.status << ' ' << r.config_hash.substr(0, 12)
        << "  " << std::fixed << std::setprecision(1) << r.duration_s << " s\n";
}

std::string loss_column(const LossCurve& curve) {
    for (const char* name : {"loss", "total"}) {
        if (std::find(curve.columns.begin(), curve.columns.end(), name) != curve.columns.end()) {
            return name;
        }
    }
    return curve.columns.back();
}

Series curve_series(const LossCurve& curve, const std::string& column, const std::string& name) {
    const auto it = std::find(curve.columns.begin(), curve.columns.end(), column);
    const size_t col = static_cast<size_t>(it - curve.columns.begin());
    Series s;
    s.name = name;
    for (const auto& row : curve.rows) {
        s.x.push_back(row[0]);
        s.y.push_back(row[col]);
    }
    return s;
}

struct GenerateFlags {
    SceneSelection selection;
    std::vector<std::string> images;
    std::string cameras_file;
    std::optional<int> descriptor;
    int views = 1;
    bool no_cameras = false;
    bool no_descriptor = false;
    std::string out = "results/generate";
};

void add_generate_flags(CLI::App* cmd, GenerateFlags& g) {
    add_scene_selection(cmd, g.selection);
    cmd->add_option("--images", g.images, "condition PNGs: frame 0, or frames 0 and N-1")->check(CLI::ExistingFile);
    cmd->add_option("--cameras", g.cameras_file, "pose JSON with N cameras")->check(CLI::ExistingFile);
    cmd->add_option("--descriptor", g.descriptor, "scene class for --images input");
    cmd->add_option("--views", g.views, "condition views taken from a dataset scene")->check(CLI::IsMember({1, 2}));
    cmd->add_flag("--no-cameras", g.no_cameras, "do not condition on dataset cameras");
    cmd->add_flag("--no-descriptor", g.no_descriptor, "drop the scene descriptor");
    cmd->add_option("--out", g.out, "results directory");
}

int run_generation(const CommonOptions& common, const GenerateFlags& g, const SamplerFlags& sf, bool baseline,
                   std::ostream& out) {
    const ExperimentConfig cfg = common.load();
    Pipeline pipe(cfg);
    const SamplerOptions sampler = sf.resolve(cfg);
    auto run = [&](const GenerateRequest& req, const fs::path& dir) {
        const GenerationResult r = baseline ? pipe.two_stage_baseline(req, sampler) : pipe.generate(req, sampler);
        write_result(dir, r);
        out << dir.string() << "  " << r.cloud.size() << " points\n";
    };
    if (!g.images.empty()) {
        GenerateRequest req;
        for (const auto& p : g.images) {
            req.images.push_back(read_png(p));
        }
        if (!g.cameras_file.empty()) {
            req.cameras = read_poses(g.cameras_file);
        }
        if (!g.no_descriptor) {
            req.descriptor = g.descriptor;
        }
        req.scene = fs::path(g.images.front()).stem().string();
        run(req, g.out);
        return kExitOk;
    }
    const auto ids = selected_scenes(cfg, g.selection);
    if (ids.empty()) {
        throw InvalidInput("give --images, --scene, or --split");
    }
    const DatasetHandle handle = open_dataset(cfg.data.root);
    for (const auto& id : ids) {
        const RenderedSequence seq = load_sequence(handle.scene_dir(id));
        GenerateRequest req;
        req.scene = id;
        req.images.push_back(seq.frame(0));
        if (g.views == 2) {
            req.images.push_back(seq.frame(seq.frames - 1));
        }
        if (!g.no_cameras) {
            req.cameras = seq.cameras;
        }
        if (!g.no_descriptor) {
            req.descriptor = seq.descriptor_class;
        }
        run(req, fs::path(g.out) / id);
    }
    return kExitOk;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"geolat: joint appearance and geometry latent generation at desk scale"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    // synth-data
    CommonOptions synth_common;
    std::optional<int> synth_count, synth_res, synth_frames;
    std::optional<std::uint64_t> synth_seed;
    std::string synth_out;
    auto* synth = app.add_subcommand("synth-data", "render the synthetic desk dataset");
    add_common(synth, synth_common);
    synth->add_option("--out", synth_out, "dataset root (default: data.root)");
    synth->add_option("--count", synth_count, "number of scenes");
    synth->add_option("--seed", synth_seed, "spec sampler seed");
    synth->add_option("--resolution", synth_res, "square image size");
    synth->add_option("--frames", synth_frames, "frames per scene (1 + 4k)");

    // train
    CommonOptions train_common;
    std::vector<std::string> train_stages;
    bool train_force = false;
    auto* train = app.add_subcommand("train", "run training stages");
    add_common(train, train_common);
    train->add_option("--stage", train_stages,
                      "codec, surrogate, prior, adapter, diffusion, adapter-nokl, diffusion-rgb, all, ablations")
        ->required();
    train->add_flag("--force", train_force, "rerun even if an artifact exists");

    // generate / baseline
    CommonOptions gen_common, base_common;
    GenerateFlags gen_flags, base_flags;
    base_flags.out = "results/baseline-2stage";
    SamplerFlags gen_sampler, base_sampler, rec_sampler;
    auto* gen = app.add_subcommand("generate", "1-view or 2-view generation");
    add_common(gen, gen_common);
    add_generate_flags(gen, gen_flags);
    add_sampler(gen, gen_sampler);
    auto* base = app.add_subcommand("baseline-2stage", "RGB-only generation followed by the frozen surrogate");
    add_common(base, base_common);
    add_generate_flags(base, base_flags);
    add_sampler(base, base_sampler);

    // reconstruct
    CommonOptions rec_common;
    SceneSelection rec_sel;
    std::string rec_frames_dir;
    std::optional<int> rec_descriptor;
    bool rec_no_descriptor = false;
    bool rec_surrogate = false;
    std::string rec_out = "results/reconstruct";
    auto* rec = app.add_subcommand("reconstruct", "feed-forward reconstruction from a full sequence");
    add_common(rec, rec_common);
    add_scene_selection(rec, rec_sel);
    rec->add_option("--frames-dir", rec_frames_dir, "directory of frame_XXX.png files")->check(CLI::ExistingDirectory);
    rec->add_option("--descriptor", rec_descriptor, "scene class for --frames-dir input");
    rec->add_flag("--no-descriptor", rec_no_descriptor, "drop the scene descriptor");
    rec->add_flag("--surrogate", rec_surrogate, "run the frozen surrogate alone instead of the diffusion model");
    rec->add_option("--out", rec_out, "results directory");
    add_sampler(rec, rec_sampler);

    // evaluate
    CommonOptions eval_common;
    std::string eval_pred, eval_gt, eval_out;
    std::optional<size_t> eval_k;
    auto* eval = app.add_subcommand("evaluate", "metric report for a results tree");
    add_common(eval, eval_common);
    eval->add_option("--pred", eval_pred, "result directory or directory of results")->required();
    eval->add_option("--gt", eval_gt, "scene directory or split directory")->required();
    eval->add_option("--out", eval_out, "where report.json / report.csv go (default: --pred)");
    eval->add_option("--sample-k", eval_k, "points kept by farthest point sampling");

    // report-plots
    CommonOptions plot_common;
    std::vector<std::string> plot_reports;
    std::string plot_out = "plots";
    auto* plots = app.add_subcommand("report-plots", "loss-curve and metric-bar PNGs");
    add_common(plots, plot_common);
    plots->add_option("--report", plot_reports, "report.json files to compare")->check(CLI::ExistingFile);
    plots->add_option("--out", plot_out, "output directory");

    // inspect-latents
    CommonOptions lat_common;
    std::vector<std::string> lat_stages;
    std::string lat_out;
    auto* lat = app.add_subcommand("inspect-latents", "channel statistics of geometry vs appearance latents");
    add_common(lat, lat_common);
    lat->add_option("--stage", lat_stages, "adapter and/or adapter-nokl (default: those that exist)");
    lat->add_option("--out", lat_out, "directory for latents_<stage>.json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (synth->parsed()) {
            const ExperimentConfig cfg = synth_common.load();
            const fs::path root = synth_out.empty() ? cfg.data.root : fs::path(synth_out);
            const int res = synth_res.value_or(cfg.data.resolution);
            const DatasetHandle h = make_dataset(root, synth_count.value_or(cfg.data.count),
                                                 synth_seed.value_or(cfg.data.seed), {res, res},
                                                 synth_frames.value_or(cfg.data.frames));
            out << "wrote " << h.train.size() << " train / " << h.test.size() << " test scenes to " << root.string()
                << "\n";
            if (h.small_split_warning) {
                err << "warning: dataset too small for a held-out split\n";
            }
        } else if (train->parsed()) {
            Pipeline pipe(train_common.load());
            std::vector<Stage> stages;
            for (const auto& s : train_stages) {
                if (s == "all") {
                    for (Stage st : main_stages()) stages.push_back(st);
                } else if (s == "ablations") {
                    for (Stage st : ablation_stages()) stages.push_back(st);
                } else {
                    stages.push_back(stage_from_name(s));
                }
            }
            for (Stage s : stages) {
                print_record(out, pipe.run_stage(s, train_force));
            }
        } else if (gen->parsed()) {
            return run_generation(gen_common, gen_flags, gen_sampler, false, out);
        } else if (base->parsed()) {
            return run_generation(base_common, base_flags, base_sampler, true, out);
        } else if (rec->parsed()) {
            const ExperimentConfig cfg = rec_common.load();
            Pipeline pipe(cfg);
            const SamplerOptions sampler = rec_sampler.resolve(cfg);
            auto run = [&](const std::vector<Image>& frames, std::optional<int> desc, const std::string& scene,
                           const fs::path& dir) {
                const GenerationResult r =
                    rec_surrogate ? pipe.surrogate_reconstruction(frames, scene) : pipe.reconstruct(frames, desc, scene, sampler);
                write_result(dir, r);
                out << dir.string() << "  " << r.cloud.size() << " points\n";
            };
            if (!rec_frames_dir.empty()) {
                std::vector<Image> frames;
                for (int i = 0;; ++i) {
                    char name[32];
                    std::snprintf(name, sizeof(name), "frame_%03d.png", i);
                    const fs::path p = fs::path(rec_frames_dir) / name;
                    if (!fs::exists(p)) break;
                    frames.push_back(read_png(p));
                }
                run(frames, rec_no_descriptor ? std::nullopt : rec_descriptor,
                    fs::path(rec_frames_dir).filename().string(), rec_out);
            } else {
                const auto ids = selected_scenes(cfg, rec_sel);
                if (ids.empty()) {
                    throw InvalidInput("give --frames-dir, --scene, or --split");
                }
                const DatasetHandle handle = open_dataset(cfg.data.root);
                for (const auto& id : ids) {
                    const RenderedSequence seq = load_sequence(handle.scene_dir(id));
                    std::vector<Image> frames;
                    for (int i = 0; i < seq.frames; ++i) frames.push_back(seq.frame(i));
                    run(frames, rec_no_descriptor ? std::nullopt : std::optional<int>(seq.descriptor_class), id,
                        fs::path(rec_out) / id);
                }
            }
        } else if (eval->parsed()) {
            const ExperimentConfig cfg = eval_common.load();
            const MetricReport report = evaluate_directory(eval_pred, eval_gt, eval_k.value_or(cfg.evaluation.sample_k));
            const fs::path dir = eval_out.empty() ? fs::path(eval_pred) : fs::path(eval_out);
            report.write(dir);
            const MetricRow m = report.aggregate();
            out << std::fixed << std::setprecision(4) << "scenes " << report.rows.size() << "  psnr " << m.psnr
                << "  ssim " << m.ssim << "  acc " << m.accuracy << "  comp " << m.completeness << "  cd " << m.cd
                << "  auc30 " << m.auc30 << "\n"
                << "wrote " << (dir / "report.json").string() << "\n";
        } else if (plots->parsed()) {
            const ExperimentConfig cfg = plot_common.load();
            fs::create_directories(plot_out);
            int written = 0;
            for (Stage s : {Stage::Codec, Stage::Surrogate, Stage::Adapter, Stage::AdapterNoKl, Stage::Diffusion,
                            Stage::DiffusionRgb}) {
                const fs::path csv = cfg.run_dir / stage_name(s) / "loss.csv";
                if (!fs::exists(csv)) continue;
                const LossCurve curve = LossCurve::read_csv(csv);
                const std::vector<Series> series = {curve_series(curve, loss_column(curve), stage_name(s))};
                PlotOptions opts;
                opts.log_y = true;
                opts.smoothing = 25;
                save_chart(fs::path(plot_out) / ("loss_" + stage_name(s) + ".png"), line_chart(series, opts), series);
                ++written;
            }
            if (!plot_reports.empty()) {
                std::vector<Json> reports;
                for (const auto& p : plot_reports) reports.push_back(read_json(p));
                std::vector<std::string> labels;
                for (const auto& row : reports.front().at("rows")) labels.push_back(row.at("scene").get<std::string>());
                for (const char* metric : {"psnr", "ssim", "accuracy", "completeness", "cd", "auc30"}) {
                    std::vector<Series> series;
                    for (size_t k = 0; k < reports.size(); ++k) {
                        Series s;
                        s.name = fs::path(plot_reports[k]).parent_path().filename().string();
                        std::map<std::string, double> by_scene;
                        for (const auto& row : reports[k].at("rows")) {
                            by_scene[row.at("scene").get<std::string>()] = row.at(metric).get<double>();
                        }
                        for (const auto& l : labels) {
                            s.y.push_back(by_scene.count(l) ? by_scene[l] : std::nan(""));
                        }
                        series.push_back(std::move(s));
                    }
                    save_chart(fs::path(plot_out) / (std::string("metric_") + metric + ".png"),
                               bar_chart(labels, series), series, labels);
                    ++written;
                }
            }
            out << "wrote " << written << " plots to " << plot_out << "\n";
        } else if (lat->parsed()) {
            Pipeline pipe(lat_common.load());
            std::vector<Stage> stages;
            for (const auto& s : lat_stages) stages.push_back(stage_from_name(s));
            if (stages.empty()) {
                for (Stage s : {Stage::Adapter, Stage::AdapterNoKl}) {
                    if (pipe.stage_complete(s)) stages.push_back(s);
                }
            }
            if (stages.empty()) {
                throw MissingPrerequisite("no adapter stage has been run; run `geolat train --stage adapter` first");
            }
            for (Stage s : stages) {
                const Json table = pipe.latent_tables(s);
                out << "[" << stage_name(s) << "]  gates " << (table.at("gates").at("passes").get<bool>() ? "PASS" : "FAIL")
                    << "\n  ch   mu_A      var_A     mean_G    dev/sigma  var_ratio\n";
                for (const auto& row : table.at("channels")) {
                    out << "  " << std::setw(2) << row.at("channel").get<int>() << std::fixed << std::setprecision(4)
                        << "  " << std::setw(8) << row.at("prior_mean").get<double>() << "  " << std::setw(8)
                        << row.at("prior_variance").get<double>() << "  " << std::setw(8)
                        << row.at("geometry_mean").get<double>() << "  " << std::setw(9)
                        << row.at("mean_deviation_sigma").get<double>() << "  " << std::setw(9)
                        << row.at("aggregate_variance_ratio").get<double>() << "\n";
                }
                if (!lat_out.empty()) {
                    fs::create_directories(lat_out);
                    write_json(fs::path(lat_out) / ("latents_" + stage_name(s) + ".json"), table);
                }
            }
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace geolat
