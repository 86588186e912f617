#include "geolat/pipeline.hpp"

#include "geolat/errors.hpp"
#include "geolat/hash.hpp"

#include <chrono>
#include <cstdlib>
#include <cstring>
#include <sstream>

namespace geolat {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- stages

std::string stage_name(Stage stage) {
    switch (stage) {
        case Stage::Codec: return "codec";
        case Stage::Surrogate: return "surrogate";
        case Stage::Prior: return "prior";
        case Stage::Adapter: return "adapter";
        case Stage::Diffusion: return "diffusion";
        case Stage::AdapterNoKl: return "adapter-nokl";
        case Stage::DiffusionRgb: return "diffusion-rgb";
    }
    throw InvalidInput("unknown stage");
}

Stage stage_from_name(const std::string& name) {
    for (Stage s : {Stage::Codec, Stage::Surrogate, Stage::Prior, Stage::Adapter, Stage::Diffusion,
                    Stage::AdapterNoKl, Stage::DiffusionRgb}) {
        if (stage_name(s) == name) {
            return s;
        }
    }
    throw InvalidInput("unknown stage '" + name +
                       "' (expected codec, surrogate, prior, adapter, diffusion, adapter-nokl, diffusion-rgb)");
}

std::vector<Stage> main_stages() {
    return {Stage::Codec, Stage::Surrogate, Stage::Prior, Stage::Adapter, Stage::Diffusion};
}

std::vector<Stage> ablation_stages() { return {Stage::AdapterNoKl, Stage::DiffusionRgb}; }

std::vector<Stage> stage_prerequisites(Stage stage) {
    switch (stage) {
        case Stage::Codec:
        case Stage::Surrogate: return {};
        case Stage::Prior: return {Stage::Codec};
        case Stage::Adapter:
        case Stage::AdapterNoKl: return {Stage::Surrogate, Stage::Prior};
        case Stage::Diffusion: return {Stage::Codec, Stage::Surrogate, Stage::Prior, Stage::Adapter};
        case Stage::DiffusionRgb: return {Stage::Codec, Stage::Prior};
    }
    return {};
}

// ---------------------------------------------------------------- config

namespace {

void reject_unknown_keys(const Json& given, const Json& reference, const std::string& prefix) {
    if (!given.is_object()) {
        return;
    }
    for (const auto& [key, value] : given.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!reference.contains(key)) {
            throw InvalidInput("unknown config key '" + path + "'");
        }
        if (reference.at(key).is_object()) {
            reject_unknown_keys(value, reference.at(key), path);
        }
    }
}

Json data_section(const DataConfig& d, bool with_root) {
    Json j = {{"count", d.count},
              {"seed", d.seed},
              {"resolution", d.resolution},
              {"frames", d.frames},
              {"train_splits", d.train_splits}};
    if (with_root) {
        j["root"] = d.root.string();
    }
    return j;
}

std::string hash_json(const Json& j) { return sha256_hex(j.dump()); }

}  // namespace

ExperimentConfig ExperimentConfig::defaults() {
    ExperimentConfig c;
    if (const char* env = std::getenv("GEN3R_DATA_DIR"); env != nullptr && *env != '\0') {
        c.data.root = env;
    }
    return c;
}

Json ExperimentConfig::to_json() const {
    return {
        {"schema_version", schema_version},
        {"data", data_section(data, true)},
        {"run_dir", run_dir.string()},
        {"threads", threads},
        {"codec", {{"model", codec.model.to_json()}, {"steps", codec.steps}, {"lr", codec.lr},
                   {"beta", codec.beta}, {"seed", codec.seed}}},
        {"surrogate", {{"model", surrogate.train.model.to_json()}, {"steps", surrogate.train.steps},
                       {"lr", surrogate.train.lr}, {"validity_weight", surrogate.train.validity_weight},
                       {"seed", surrogate.train.seed}, {"extra_scenes", surrogate.extra_scenes},
                       {"heldout_scenes", surrogate.heldout_scenes}}},
        {"adapter", {{"model", adapter.model.to_json()}, {"steps", adapter.steps}, {"lr", adapter.lr},
                     {"lambda1", adapter.lambda1}, {"lambda2", adapter.lambda2}, {"seed", adapter.seed}}},
        {"ablations", {{"lambda2", ablation_lambda2}}},
        {"diffusion", {{"model", diffusion.model.to_json()}, {"steps", diffusion.steps}, {"lr", diffusion.lr},
                       {"sample_latents", diffusion.sample_latents}, {"seed", diffusion.seed}}},
        {"sampler", {{"steps", sampler.steps}, {"cfg_scale", sampler.cfg_scale}, {"seed", sampler.seed}}},
        {"evaluation", {{"sample_k", evaluation.sample_k},
                        {"confidence_quantile", evaluation.confidence_quantile},
                        {"confidence_threshold", evaluation.confidence_threshold}}},
    };
}

ExperimentConfig ExperimentConfig::from_json(const Json& given) {
    const ExperimentConfig base = defaults();
    const Json reference = base.to_json();
    reject_unknown_keys(given, reference, "");
    Json j = reference;
    j.merge_patch(given);

    ExperimentConfig c;
    c.schema_version = j.at("schema_version").get<int>();
    if (c.schema_version != kConfigSchemaVersion) {
        throw ConfigMismatch("unsupported config schema_version " + std::to_string(c.schema_version));
    }
    const Json& d = j.at("data");
    c.data.root = d.at("root").get<std::string>();
    c.data.count = d.at("count").get<int>();
    c.data.seed = d.at("seed").get<std::uint64_t>();
    c.data.resolution = d.at("resolution").get<int>();
    c.data.frames = d.at("frames").get<int>();
    c.data.train_splits = d.at("train_splits").get<std::vector<std::string>>();
    c.run_dir = j.at("run_dir").get<std::string>();
    c.threads = j.at("threads").get<int>();

    const Json& cj = j.at("codec");
    c.codec.model = CodecConfig::from_json(cj.at("model"));
    c.codec.steps = cj.at("steps").get<int>();
    c.codec.lr = cj.at("lr").get<double>();
    c.codec.beta = cj.at("beta").get<double>();
    c.codec.seed = cj.at("seed").get<std::uint64_t>();

    const Json& sj = j.at("surrogate");
    c.surrogate.train.model = SurrogateConfig::from_json(sj.at("model"));
    c.surrogate.train.steps = sj.at("steps").get<int>();
    c.surrogate.train.lr = sj.at("lr").get<double>();
    c.surrogate.train.validity_weight = sj.at("validity_weight").get<double>();
    c.surrogate.train.seed = sj.at("seed").get<std::uint64_t>();
    c.surrogate.extra_scenes = sj.at("extra_scenes").get<int>();
    c.surrogate.heldout_scenes = sj.at("heldout_scenes").get<int>();

    const Json& aj = j.at("adapter");
    c.adapter.model = AdapterConfig::from_json(aj.at("model"));
    c.adapter.steps = aj.at("steps").get<int>();
    c.adapter.lr = aj.at("lr").get<double>();
    c.adapter.lambda1 = aj.at("lambda1").get<double>();
    c.adapter.lambda2 = aj.at("lambda2").get<double>();
    c.adapter.seed = aj.at("seed").get<std::uint64_t>();
    c.ablation_lambda2 = j.at("ablations").at("lambda2").get<double>();

    const Json& dj = j.at("diffusion");
    c.diffusion.model = DiTConfig::from_json(dj.at("model"));
    c.diffusion.steps = dj.at("steps").get<int>();
    c.diffusion.lr = dj.at("lr").get<double>();
    c.diffusion.sample_latents = dj.at("sample_latents").get<bool>();
    c.diffusion.seed = dj.at("seed").get<std::uint64_t>();

    const Json& pj = j.at("sampler");
    c.sampler.steps = pj.at("steps").get<int>();
    c.sampler.cfg_scale = pj.at("cfg_scale").get<double>();
    c.sampler.seed = pj.at("seed").get<std::uint64_t>();

    const Json& ej = j.at("evaluation");
    c.evaluation.sample_k = ej.at("sample_k").get<size_t>();
    c.evaluation.confidence_quantile = ej.at("confidence_quantile").get<double>();
    c.evaluation.confidence_threshold = ej.at("confidence_threshold").get<double>();

    if (c.data.count < 1 || c.data.resolution % (c.surrogate.train.model.patch) != 0 || c.threads < 1) {
        throw InvalidInput("config: count, resolution, or threads out of range");
    }
    latent_frame_count(c.data.frames);
    if (c.data.resolution != c.surrogate.train.model.image_size) {
        throw ConfigMismatch("config: data.resolution differs from surrogate.model.image_size");
    }
    if (c.diffusion.model.frames != c.data.frames) {
        throw ConfigMismatch("config: diffusion.model.frames differs from data.frames");
    }
    c.adapter.model.check_compatible(c.surrogate.train.model);
    c.diffusion.model.validate();
    if (c.evaluation.confidence_quantile < 0.0 || c.evaluation.confidence_quantile >= 1.0) {
        throw InvalidInput("config: evaluation.confidence_quantile must lie in [0, 1)");
    }
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::optional<fs::path>& file, const std::vector<std::string>& overrides) {
    Json j = file ? read_json(*file) : Json::object();
    for (const auto& item : overrides) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw InvalidInput("override '" + item + "' is not key=value");
        }
        const std::string key = item.substr(0, eq);
        const std::string text = item.substr(eq + 1);
        Json value = Json::parse(text, nullptr, false);
        if (value.is_discarded()) {
            value = text;
        }
        Json* node = &j;
        std::stringstream ss(key);
        std::string part;
        std::vector<std::string> parts;
        while (std::getline(ss, part, '.')) {
            parts.push_back(part);
        }
        for (size_t k = 0; k + 1 < parts.size(); ++k) {
            node = &(*node)[parts[k]];
        }
        (*node)[parts.back()] = value;
    }
    return from_json(j);
}

std::string ExperimentConfig::hash() const {
    Json j = to_json();
    j.at("data").erase("root");
    j.erase("run_dir");
    return hash_json(j);
}

std::string ExperimentConfig::stage_hash(Stage stage) const {
    const Json full = to_json();
    Json j = {{"stage", stage_name(stage)}, {"schema_version", schema_version}};
    switch (stage) {
        case Stage::Codec:
            j["data"] = data_section(data, false);
            j["codec"] = full.at("codec");
            break;
        case Stage::Surrogate:
            j["data"] = data_section(data, false);
            j["surrogate"] = full.at("surrogate");
            break;
        case Stage::Prior:
            break;
        case Stage::Adapter:
            j["adapter"] = full.at("adapter");
            break;
        case Stage::AdapterNoKl:
            j["adapter"] = full.at("adapter");
            j["adapter"]["lambda2"] = ablation_lambda2;
            break;
        case Stage::Diffusion:
        case Stage::DiffusionRgb:
            j["diffusion"] = full.at("diffusion");
            break;
    }
    Json prereq = Json::object();
    for (Stage p : stage_prerequisites(stage)) {
        prereq[stage_name(p)] = stage_hash(p);
    }
    j["prerequisites"] = prereq;
    return hash_json(j);
}

// ---------------------------------------------------------------- tensor helpers

void configure_torch(int threads) {
    torch::set_num_threads(threads);
    at::globalContext().setDeterministicAlgorithms(true, false);
    at::globalContext().setFlushDenormal(true);
}

torch::Tensor images_to_tensor(const std::vector<Image>& images) {
    if (images.empty()) {
        throw InvalidInput("no images");
    }
    const int h = images.front().height, w = images.front().width;
    auto out = torch::empty({static_cast<int64_t>(images.size()), h, w, 3});
    for (size_t i = 0; i < images.size(); ++i) {
        const auto& img = images[i];
        if (img.height != h || img.width != w || img.channels != 3) {
            throw InvalidInput("images must share one size and have three channels");
        }
        std::memcpy(out[static_cast<int64_t>(i)].data_ptr<float>(), img.data.data(), img.data.size() * sizeof(float));
    }
    return out.permute({0, 3, 1, 2}).contiguous();
}

std::vector<Image> tensor_to_images(const torch::Tensor& images) {
    const auto t = images.detach().to(torch::kFloat32).permute({0, 2, 3, 1}).contiguous();
    std::vector<Image> out;
    for (int64_t i = 0; i < t.size(0); ++i) {
        Image img(static_cast<int>(t.size(1)), static_cast<int>(t.size(2)), 3);
        std::memcpy(img.data.data(), t[i].data_ptr<float>(), img.data.size() * sizeof(float));
        out.push_back(std::move(img));
    }
    return out;
}

torch::Tensor confidence_validity(const torch::Tensor& confidence, double quantile, double threshold) {
    const auto flat = confidence.detach().flatten().to(torch::kFloat64);
    const double q = quantile > 0.0 ? torch::quantile(flat, quantile).item<double>() : -1.0;
    const auto c = confidence.detach().to(torch::kFloat64);
    return ((c >= threshold) & (c >= q)).to(torch::kFloat32);
}

// ---------------------------------------------------------------- pipeline

Pipeline::Pipeline(ExperimentConfig config) : config_(std::move(config)) { configure_torch(config_.threads); }

fs::path Pipeline::stage_dir(Stage stage) const { return config_.run_dir / stage_name(stage); }

Json Pipeline::read_stage_record(Stage stage) const {
    const fs::path p = stage_dir(stage) / "stage.json";
    return fs::exists(p) ? read_json(p) : Json();
}

bool Pipeline::stage_complete(Stage stage) const {
    const Json rec = read_stage_record(stage);
    return rec.is_object() && rec.value("status", "") == "complete";
}

void Pipeline::check_prerequisites(Stage stage) const {
    for (Stage p : stage_prerequisites(stage)) {
        const Json rec = read_stage_record(p);
        if (!rec.is_object() || rec.value("status", "") != "complete") {
            throw MissingPrerequisite("stage '" + stage_name(stage) + "' requires stage '" + stage_name(p) +
                                      "'; run `geolat train --stage " + stage_name(p) + "` first");
        }
        if (rec.value("config_hash", "") != config_.stage_hash(p)) {
            throw ConfigMismatch("prerequisite stage '" + stage_name(p) +
                                 "' was produced with a different config; rerun it with --force");
        }
    }
}

StageRecord Pipeline::run_stage(Stage stage, bool force) {
    const std::string expected = config_.stage_hash(stage);
    const Json existing = read_stage_record(stage);
    if (existing.is_object() && existing.value("status", "") == "complete" && !force) {
        if (existing.value("config_hash", "") != expected) {
            throw ConfigMismatch("stage '" + stage_name(stage) + "' exists with config hash " +
                                 existing.value("config_hash", "") + " but the current config hashes to " + expected +
                                 "; use --force to overwrite");
        }
        StageRecord r;
        r.stage = stage_name(stage);
        r.status = "cached";
        r.config_hash = expected;
        r.parameter_hash = existing.value("parameter_hash", "");
        r.metrics = existing.value("metrics", Json::object());
        const fs::path timing = stage_dir(stage) / "timing.json";
        r.duration_s = fs::exists(timing) ? read_json(timing).value("duration_s", 0.0) : 0.0;
        return r;
    }
    check_prerequisites(stage);
    fs::create_directories(stage_dir(stage));
    // Drop any in-memory copy of an artifact about to be replaced.
    switch (stage) {
        case Stage::Codec: codec_.reset(); break;
        case Stage::Surrogate: surrogate_.reset(); break;
        case Stage::Prior: prior_.reset(); break;
        case Stage::Adapter:
        case Stage::AdapterNoKl: adapters_.erase(stage); break;
        case Stage::Diffusion:
        case Stage::DiffusionRgb: diffusions_.erase(stage); break;
    }
    const auto start = std::chrono::steady_clock::now();
    StageRecord r = execute(stage);
    r.duration_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    r.stage = stage_name(stage);
    r.status = "complete";
    r.config_hash = expected;

    Json prereq = Json::object();
    for (Stage p : stage_prerequisites(stage)) {
        prereq[stage_name(p)] = config_.stage_hash(p);
    }
    const Json full = config_.to_json();
    Json section;
    switch (stage) {
        case Stage::Codec: section = full.at("codec"); break;
        case Stage::Surrogate: section = full.at("surrogate"); break;
        case Stage::Prior: section = Json::object(); break;
        case Stage::Adapter: section = full.at("adapter"); break;
        case Stage::AdapterNoKl:
            section = full.at("adapter");
            section["lambda2"] = config_.ablation_lambda2;
            break;
        case Stage::Diffusion: section = full.at("diffusion"); break;
        case Stage::DiffusionRgb:
            section = full.at("diffusion");
            section["rgb_only"] = true;
            break;
    }
    write_json(stage_dir(stage) / "stage.json", {{"stage", r.stage},
                                                  {"status", r.status},
                                                  {"config_hash", r.config_hash},
                                                  {"config", section},
                                                  {"data", data_section(config_.data, false)},
                                                  {"metrics", r.metrics},
                                                  {"parameter_hash", r.parameter_hash},
                                                  {"prerequisites", prereq}});
    write_json(stage_dir(stage) / "timing.json", {{"stage", r.stage}, {"duration_s", r.duration_s}});
    return r;
}

std::vector<RenderedSequence> Pipeline::load_scenes(const std::vector<std::string>& splits) const {
    const fs::path manifest_path = config_.data.root / "manifest.json";
    if (!fs::exists(manifest_path)) {
        throw MissingPrerequisite("no dataset at " + config_.data.root.string() + "; run `geolat synth-data` first");
    }
    const Json m = read_json(manifest_path);
    const auto res = m.at("resolution").get<std::vector<int>>();
    if (m.at("count").get<int>() != config_.data.count || m.at("seed").get<std::uint64_t>() != config_.data.seed ||
        m.at("frame_count").get<int>() != config_.data.frames || res.at(0) != config_.data.resolution ||
        res.at(1) != config_.data.resolution) {
        throw ConfigMismatch("dataset at " + config_.data.root.string() + " does not match the data config");
    }
    const DatasetHandle handle = open_dataset(config_.data.root);
    std::vector<RenderedSequence> out;
    for (const auto& id : handle.scenes(splits)) {
        out.push_back(load_sequence(handle.scene_dir(id)));
    }
    return out;
}

std::vector<SceneTensors> Pipeline::training_scenes() const {
    const DatasetHandle handle = open_dataset(config_.data.root);
    const auto ids = handle.scenes(config_.data.train_splits);
    const auto seqs = load_scenes(config_.data.train_splits);
    std::vector<SceneTensors> out;
    for (size_t i = 0; i < seqs.size(); ++i) {
        out.push_back(to_tensors(seqs[i], ids[i]));
    }
    if (out.empty()) {
        throw InvalidInput("the configured training splits hold no scenes");
    }
    return out;
}

namespace {

std::vector<SceneTensors> rendered_scenes(std::uint64_t stream_seed, int count, int resolution, int frames,
                                          const std::string& prefix) {
    std::vector<SceneTensors> out;
    for (int i = 0; i < count; ++i) {
        auto sampled = sample_scene(mix_seed(stream_seed, static_cast<std::uint64_t>(i)), {resolution, resolution}, frames);
        quantize_images(sampled.sequence);
        out.push_back(to_tensors(sampled.sequence, prefix + std::to_string(i)));
    }
    return out;
}

constexpr std::uint64_t kExtraSceneStream = 0x5EED0001;
constexpr std::uint64_t kHeldoutSceneStream = 0x5EED0002;

void assert_unchanged(const std::string& what, const std::string& before, const std::string& after) {
    if (before != after) {
        throw std::logic_error("frozen " + what + " parameters changed during training");
    }
}

}  // namespace

StageRecord Pipeline::execute(Stage stage) {
    StageRecord r;
    const fs::path dir = stage_dir(stage);
    switch (stage) {
        case Stage::Codec: {
            auto trained = train_codec(training_scenes(), config_.codec);
            freeze(*trained.model);
            save_checkpoint(dir / "model.ckpt", *trained.model, config_.codec.model.to_json(),
                            {{"stage", "codec"}, {"config_hash", config_.stage_hash(stage)}});
            trained.curve.write_csv(dir / "loss.csv");
            r.metrics = trained.metrics;
            r.parameter_hash = parameter_hash(*trained.model);
            codec_ = trained.model;
            break;
        }
        case Stage::Surrogate: {
            const auto& d = config_.data;
            auto scenes = training_scenes();
            const auto desk = scenes;
            const auto extra = rendered_scenes(mix_seed(d.seed, kExtraSceneStream), config_.surrogate.extra_scenes,
                                               d.resolution, d.frames, "extra_");
            scenes.insert(scenes.end(), extra.begin(), extra.end());
            auto trained = pretrain_surrogate(scenes, config_.surrogate.train);
            freeze(*trained.model);
            save_checkpoint(dir / "model.ckpt", *trained.model, config_.surrogate.train.model.to_json(),
                            {{"stage", "surrogate"}, {"config_hash", config_.stage_hash(stage)}});
            trained.curve.write_csv(dir / "loss.csv");
            r.metrics = trained.metrics;
            r.metrics["train_scenes"] = scenes.size();
            r.metrics["desk"] = surrogate_diagnostics(trained.model, desk).to_json();
            if (config_.surrogate.heldout_scenes > 0) {
                const auto heldout = rendered_scenes(mix_seed(d.seed, kHeldoutSceneStream),
                                                     config_.surrogate.heldout_scenes, d.resolution, d.frames, "heldout_");
                r.metrics["heldout"] = surrogate_diagnostics(trained.model, heldout).to_json();
            }
            r.parameter_hash = parameter_hash(*trained.model);
            surrogate_ = trained.model;
            break;
        }
        case Stage::Prior: {
            const auto latents = appearance_means(codec(), training_scenes());
            const LatentPriorStats stats = fit_appearance_prior(latents);
            write_json(dir / "prior.json", stats.to_json());
            r.metrics = {{"count", stats.count}, {"floored", stats.floored}, {"mean", stats.mean},
                         {"variance", stats.variance}};
            r.parameter_hash = hash_json(stats.to_json());
            prior_ = stats;
            break;
        }
        case Stage::Adapter:
        case Stage::AdapterNoKl: {
            auto& sur = surrogate();
            const auto& pri = prior();
            AdapterTrainOptions opts = config_.adapter;
            if (stage == Stage::AdapterNoKl) {
                opts.lambda2 = config_.ablation_lambda2;
            }
            const std::string before = parameter_hash(*sur);
            assert_unchanged("surrogate", read_stage_record(Stage::Surrogate).value("parameter_hash", ""), before);
            auto trained = train_adapter(sur, pri, training_scenes(), opts);
            assert_unchanged("surrogate", before, parameter_hash(*sur));
            freeze(*trained.model);
            Json model_config = opts.model.to_json();
            save_checkpoint(dir / "model.ckpt", *trained.model, model_config,
                            {{"stage", stage_name(stage)}, {"config_hash", config_.stage_hash(stage)},
                             {"lambda1", opts.lambda1}, {"lambda2", opts.lambda2}});
            trained.curve.write_csv(dir / "loss.csv");
            r.metrics = trained.metrics;
            r.metrics["lambda2"] = opts.lambda2;
            r.metrics["surrogate_hash_before"] = before;
            r.metrics["surrogate_hash_after"] = parameter_hash(*sur);
            r.parameter_hash = parameter_hash(*trained.model);
            adapters_.insert_or_assign(stage, trained.model);
            break;
        }
        case Stage::Diffusion:
        case Stage::DiffusionRgb: {
            const bool rgb = stage == Stage::DiffusionRgb;
            auto& cod = codec();
            const auto& pri = prior();
            ReconSurrogate* sur = rgb ? nullptr : &surrogate();
            GeometryAdapter* adp = rgb ? nullptr : &adapter(Stage::Adapter);
            const std::string codec_before = parameter_hash(*cod);
            assert_unchanged("codec", read_stage_record(Stage::Codec).value("parameter_hash", ""), codec_before);
            const std::string sur_before = sur ? parameter_hash(**sur) : "";
            DiffusionTrainOptions opts = config_.diffusion;
            opts.rgb_only = rgb;
            auto trained = train_diffusion(cod, sur, adp, pri, training_scenes(), opts);
            assert_unchanged("codec", codec_before, parameter_hash(*cod));
            if (sur) {
                assert_unchanged("surrogate", sur_before, parameter_hash(**sur));
            }
            freeze(*trained.model);
            Json model_config = opts.model.to_json();
            save_checkpoint(dir / "model.ckpt", *trained.model, model_config,
                            {{"stage", stage_name(stage)}, {"config_hash", config_.stage_hash(stage)},
                             {"rgb_only", rgb}});
            trained.curve.write_csv(dir / "loss.csv");
            r.metrics = trained.metrics;
            r.metrics["codec_hash"] = codec_before;
            r.parameter_hash = parameter_hash(*trained.model);
            diffusions_.insert_or_assign(stage, trained.model);
            break;
        }
    }
    return r;
}

// ---------------------------------------------------------------- model access

namespace {
void require_stage(const Pipeline& p, Stage stage) {
    if (!p.stage_complete(stage)) {
        throw MissingPrerequisite("stage '" + stage_name(stage) + "' has not been run; run `geolat train --stage " +
                                  stage_name(stage) + "` first");
    }
}
}  // namespace

AppearanceCodec& Pipeline::codec() {
    if (!codec_) {
        require_stage(*this, Stage::Codec);
        const fs::path path = stage_dir(Stage::Codec) / "model.ckpt";
        AppearanceCodec m(CodecConfig::from_json(read_checkpoint_manifest(path).at("config")));
        load_checkpoint(path, *m);
        freeze(*m);
        m->eval();
        codec_ = m;
    }
    return *codec_;
}

ReconSurrogate& Pipeline::surrogate() {
    if (!surrogate_) {
        require_stage(*this, Stage::Surrogate);
        const fs::path path = stage_dir(Stage::Surrogate) / "model.ckpt";
        ReconSurrogate m(SurrogateConfig::from_json(read_checkpoint_manifest(path).at("config")));
        load_checkpoint(path, *m);
        freeze(*m);
        m->eval();
        surrogate_ = m;
    }
    return *surrogate_;
}

const LatentPriorStats& Pipeline::prior() {
    if (!prior_) {
        require_stage(*this, Stage::Prior);
        prior_ = LatentPriorStats::from_json(read_json(stage_dir(Stage::Prior) / "prior.json"));
    }
    return *prior_;
}

GeometryAdapter& Pipeline::adapter(Stage stage) {
    if (stage != Stage::Adapter && stage != Stage::AdapterNoKl) {
        throw InvalidInput("not an adapter stage: " + stage_name(stage));
    }
    auto it = adapters_.find(stage);
    if (it == adapters_.end()) {
        require_stage(*this, stage);
        const fs::path path = stage_dir(stage) / "model.ckpt";
        GeometryAdapter m(AdapterConfig::from_json(read_checkpoint_manifest(path).at("config")));
        load_checkpoint(path, *m);
        freeze(*m);
        m->eval();
        it = adapters_.emplace(stage, m).first;
    }
    return it->second;
}

JointDiT& Pipeline::diffusion(Stage stage) {
    if (stage != Stage::Diffusion && stage != Stage::DiffusionRgb) {
        throw InvalidInput("not a diffusion stage: " + stage_name(stage));
    }
    auto it = diffusions_.find(stage);
    if (it == diffusions_.end()) {
        require_stage(*this, stage);
        const fs::path path = stage_dir(stage) / "model.ckpt";
        JointDiT m(DiTConfig::from_json(read_checkpoint_manifest(path).at("config")));
        load_checkpoint(path, *m);
        freeze(*m);
        m->eval();
        it = diffusions_.emplace(stage, m).first;
    }
    return it->second;
}

// ---------------------------------------------------------------- inference

void Pipeline::check_request_frames(const std::vector<Image>& images) const {
    for (const auto& img : images) {
        if (img.height != config_.data.resolution || img.width != config_.data.resolution || img.channels != 3) {
            throw InvalidInput("condition images must be " + std::to_string(config_.data.resolution) + "x" +
                               std::to_string(config_.data.resolution) + " RGB");
        }
    }
}

GenerationResult Pipeline::finish_geometry(std::vector<Image> frames, const GeometryOutputs& geo, Json provenance) const {
    GenerationResult r;
    r.frames = std::move(frames);
    const auto valid = confidence_validity(geo.confidence, config_.evaluation.confidence_quantile,
                                           config_.evaluation.confidence_threshold);
    r.cameras = cameras_from_tensor(geo.cameras);
    for (int64_t i = 0; i < geo.depth.size(0); ++i) {
        r.depths.push_back(depth_from_tensor(geo.depth[i], valid[i]));
    }
    const auto pts = geo.points.detach().to(torch::kFloat32).contiguous();
    r.pointmaps.assign(pts.data_ptr<float>(), pts.data_ptr<float>() + pts.numel());
    r.cloud = merge_depths(r.depths, r.cameras);
    provenance["cloud_points"] = r.cloud.size();
    r.provenance = std::move(provenance);
    return r;
}

GenerationResult Pipeline::decode_result(const torch::Tensor& z, bool joint, const Json& provenance) {
    torch::NoGradGuard guard;
    const auto [a, g] = split_joint_latent(z);
    const auto& pri = prior();
    const auto frames = decode_appearance(codec(), denormalize_latent(a, pri));
    GeometryOutputs geo;
    if (joint) {
        geo = surrogate()->decode_tokens(adapter()->decode(denormalize_latent(g, pri)));
    } else {
        geo = surrogate()->decode_tokens(surrogate()->encode_views(frames));
    }
    return finish_geometry(tensor_to_images(frames), geo, provenance);
}

GenerationResult Pipeline::sample(Stage model_stage, const torch::Tensor& images, const torch::Tensor& frame_mask,
                                  const std::optional<std::vector<CameraPose>>& cameras, std::optional<int> descriptor,
                                  const SamplerOptions& sampler, Json provenance) {
    torch::NoGradGuard guard;
    auto& model = diffusion(model_stage);
    const int frames = static_cast<int>(images.size(0));
    DiffusionConditioning cond;
    if (descriptor) {
        if (*descriptor < 0 || *descriptor >= model->config().num_classes) {
            throw InvalidInput("descriptor class out of range");
        }
        cond.descriptor = *descriptor;
        cond.descriptor_dropped = false;
    } else {
        cond.descriptor_dropped = true;
    }
    if (cameras) {
        if (static_cast<int>(cameras->size()) != frames) {
            throw InvalidInput("camera list length " + std::to_string(cameras->size()) + " differs from N = " +
                               std::to_string(frames));
        }
        for (const auto& c : *cameras) {
            c.validate();
        }
        cond.cameras = cameras_to_tensor(*cameras);
        cond.camera_dropped = false;
    }
    const auto z_cond = build_condition(codec(), prior(), images, frame_mask);
    const auto z = sample_joint(model, z_cond, cond, sampler);

    Json stage_hashes = Json::object();
    for (Stage s : stage_prerequisites(model_stage)) {
        stage_hashes[stage_name(s)] = config_.stage_hash(s);
    }
    stage_hashes[stage_name(model_stage)] = config_.stage_hash(model_stage);
    provenance["config_hash"] = config_.hash();
    provenance["stage_hashes"] = stage_hashes;
    provenance["seed"] = sampler.seed;
    provenance["steps"] = sampler.steps;
    provenance["cfg_scale"] = sampler.cfg_scale;
    provenance["frames"] = frames;
    provenance["descriptor"] = descriptor ? Json(*descriptor) : Json(nullptr);
    provenance["cameras_provided"] = cameras.has_value();
    if (cameras) {
        provenance["condition_cameras"] = poses_to_json(*cameras);
    }
    provenance["confidence_quantile"] = config_.evaluation.confidence_quantile;
    provenance["confidence_threshold"] = config_.evaluation.confidence_threshold;
    return decode_result(z, model_stage == Stage::Diffusion, provenance);
}

namespace {
std::pair<torch::Tensor, torch::Tensor> condition_frames(const std::vector<Image>& provided, int frames) {
    if (provided.size() != 1 && provided.size() != 2) {
        throw InvalidInput("generation takes one or two condition images");
    }
    const auto given = images_to_tensor(provided);
    auto images = torch::zeros({frames, 3, given.size(2), given.size(3)});
    auto mask = torch::zeros({frames});
    images[0] = given[0];
    mask[0] = 1.0;
    if (provided.size() == 2) {
        images[frames - 1] = given[1];
        mask[frames - 1] = 1.0;
    }
    return {images, mask};
}
}  // namespace

GenerationResult Pipeline::generate(const GenerateRequest& request, std::optional<SamplerOptions> sampler) {
    check_request_frames(request.images);
    const auto [images, mask] = condition_frames(request.images, config_.data.frames);
    const ConditionMode mode = request.images.size() == 1 ? ConditionMode::FirstFrame : ConditionMode::FirstLast;
    Json prov = {{"kind", "generate"}, {"mode", mode_name(mode)}, {"scene", request.scene}};
    return sample(Stage::Diffusion, images, mask, request.cameras, request.descriptor, sampler.value_or(config_.sampler),
                  prov);
}

GenerationResult Pipeline::reconstruct(const std::vector<Image>& frames, std::optional<int> descriptor,
                                       const std::string& scene, std::optional<SamplerOptions> sampler) {
    latent_frame_count(static_cast<int>(frames.size()));
    if (static_cast<int>(frames.size()) != config_.data.frames) {
        throw InvalidInput("reconstruction expects " + std::to_string(config_.data.frames) + " frames");
    }
    check_request_frames(frames);
    const auto images = images_to_tensor(frames);
    const auto mask = torch::ones({static_cast<int64_t>(frames.size())});
    Json prov = {{"kind", "reconstruct"}, {"mode", mode_name(ConditionMode::AllFrames)}, {"scene", scene}};
    return sample(Stage::Diffusion, images, mask, std::nullopt, descriptor, sampler.value_or(config_.sampler), prov);
}

GenerationResult Pipeline::two_stage_baseline(const GenerateRequest& request, std::optional<SamplerOptions> sampler) {
    check_request_frames(request.images);
    const auto [images, mask] = condition_frames(request.images, config_.data.frames);
    const ConditionMode mode = request.images.size() == 1 ? ConditionMode::FirstFrame : ConditionMode::FirstLast;
    Json prov = {{"kind", "baseline-2stage"}, {"mode", mode_name(mode)}, {"scene", request.scene}};
    return sample(Stage::DiffusionRgb, images, mask, request.cameras, request.descriptor,
                  sampler.value_or(config_.sampler), prov);
}

GenerationResult Pipeline::surrogate_reconstruction(const std::vector<Image>& frames, const std::string& scene) {
    torch::NoGradGuard guard;
    check_request_frames(frames);
    const auto images = images_to_tensor(frames);
    const auto geo = surrogate()->decode_tokens(surrogate()->encode_views(images));
    Json prov = {{"kind", "surrogate"},
                 {"scene", scene},
                 {"config_hash", config_.hash()},
                 {"stage_hashes", {{"surrogate", config_.stage_hash(Stage::Surrogate)}}},
                 {"frames", frames.size()},
                 {"confidence_quantile", config_.evaluation.confidence_quantile},
                 {"confidence_threshold", config_.evaluation.confidence_threshold}};
    return finish_geometry(frames, geo, prov);
}

// ---------------------------------------------------------------- latent inspection

namespace {
std::vector<Posterior> geometry_posteriors(ReconSurrogate& sur, GeometryAdapter& adp,
                                           const std::vector<SceneTensors>& scenes) {
    torch::NoGradGuard guard;
    std::vector<Posterior> out;
    for (const auto& s : scenes) {
        out.push_back(adp->encode(sur->encode_views(s.images)));
    }
    return out;
}
}  // namespace

LatentGateReport Pipeline::inspect_latents(Stage adapter_stage) {
    auto& adp = adapter(adapter_stage);
    return latent_gates(geometry_posteriors(surrogate(), adp, training_scenes()), prior());
}

Json Pipeline::latent_tables(Stage adapter_stage) {
    auto& adp = adapter(adapter_stage);
    const auto scenes = training_scenes();
    const auto posts = geometry_posteriors(surrogate(), adp, scenes);
    const auto& pri = prior();
    const auto gates = latent_gates(posts, pri);

    std::vector<torch::Tensor> gm;
    for (const auto& p : posts) {
        gm.push_back(p.mean.to(torch::kFloat64));
    }
    const auto g = torch::cat(gm, 0);
    const auto a = appearance_means(codec(), scenes).to(torch::kFloat64);
    const std::vector<int64_t> dims = {0, 2, 3};
    const auto g_mean = g.mean(dims), a_mean = a.mean(dims);
    const auto g_var = (g - g_mean.view({1, -1, 1, 1})).square().mean(dims);
    const auto a_var = (a - a_mean.view({1, -1, 1, 1})).square().mean(dims);

    Json rows = Json::array();
    for (int64_t k = 0; k < g.size(1); ++k) {
        rows.push_back({{"channel", k},
                        {"prior_mean", pri.mean[k]},
                        {"prior_variance", pri.variance[k]},
                        {"appearance_mean", a_mean[k].item<double>()},
                        {"appearance_variance", a_var[k].item<double>()},
                        {"geometry_mean", g_mean[k].item<double>()},
                        {"geometry_variance_of_means", g_var[k].item<double>()},
                        {"mean_deviation_sigma", gates.mean_deviation_sigma[k]},
                        {"aggregate_variance_ratio", gates.variance_ratio[k]}});
    }
    return {{"stage", stage_name(adapter_stage)},
            {"config_hash", config_.stage_hash(adapter_stage)},
            {"channels", rows},
            {"gates", gates.to_json()}};
}

}  // namespace geolat
