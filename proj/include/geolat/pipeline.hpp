#pragma once

#include "geolat/conditioning.hpp"
#include "geolat/evaluation.hpp"
#include "geolat/models.hpp"
#include "geolat/result.hpp"
#include "geolat/training.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace geolat {

inline constexpr int kConfigSchemaVersion = 1;

enum class Stage { Codec, Surrogate, Prior, Adapter, Diffusion, AdapterNoKl, DiffusionRgb };

std::string stage_name(Stage stage);
Stage stage_from_name(const std::string& name);
/// The five main stages in execution order.
std::vector<Stage> main_stages();
/// Both ablation stages.
std::vector<Stage> ablation_stages();
std::vector<Stage> stage_prerequisites(Stage stage);

struct DataConfig {
    std::filesystem::path root = "data/desk";
    int count = 8;
    std::uint64_t seed = 7;
    int resolution = 64;
    int frames = 9;
    std::vector<std::string> train_splits = {"train", "test"};
};

struct SurrogateStageConfig {
    SurrogateTrainOptions train;
    int extra_scenes = 24;    // rendered in memory from a separate seed stream
    int heldout_scenes = 4;   // never trained on; used for depth-error diagnostics
};

struct EvaluationConfig {
    size_t sample_k = kDeskSampleCount;
    double confidence_quantile = 0.05;
    double confidence_threshold = 0.5;
};

/// Every knob of a run; serialized with sorted keys so the hash ignores key order.
struct ExperimentConfig {
    int schema_version = kConfigSchemaVersion;
    DataConfig data;
    std::filesystem::path run_dir = "runs/desk";
    int threads = 1;
    CodecTrainOptions codec;
    SurrogateStageConfig surrogate;
    AdapterTrainOptions adapter;
    double ablation_lambda2 = 0.0;
    DiffusionTrainOptions diffusion;
    SamplerOptions sampler;
    EvaluationConfig evaluation;

    /// Defaults with data.root taken from GEN3R_DATA_DIR when set.
    static ExperimentConfig defaults();
    Json to_json() const;
    /// Missing keys keep their defaults; unknown keys are rejected.
    static ExperimentConfig from_json(const Json& j);
    /// Reads an optional JSON file and applies "dotted.key=value" overrides (values parsed as JSON, else strings).
    static ExperimentConfig load(const std::optional<std::filesystem::path>& file,
                                 const std::vector<std::string>& overrides = {});

    /// SHA-256 of the canonical serialization, leaving out data.root and run_dir.
    std::string hash() const;
    /// Hash of the sections a stage depends on, chained through its prerequisites.
    std::string stage_hash(Stage stage) const;
};

struct StageRecord {
    std::string stage;
    std::string status;  // "complete" or "cached"
    std::string config_hash;
    std::string parameter_hash;
    Json metrics = Json::object();
    double duration_s = 0.0;
};

/// Request for 1-view or 2-view generation.
struct GenerateRequest {
    std::vector<Image> images;                       // frame 0, or frames 0 and N-1
    std::optional<std::vector<CameraPose>> cameras;  // N cameras when given
    std::optional<int> descriptor;                   // scene class; dropped when absent
    std::string scene;                               // recorded in provenance
};

class Pipeline {
public:
    explicit Pipeline(ExperimentConfig config);

    const ExperimentConfig& config() const { return config_; }
    std::filesystem::path stage_dir(Stage stage) const;
    bool stage_complete(Stage stage) const;

    /// Runs one stage; "cached" when an identical run exists. Throws MissingPrerequisite or ConfigMismatch.
    StageRecord run_stage(Stage stage, bool force = false);

    GenerationResult generate(const GenerateRequest& request, std::optional<SamplerOptions> sampler = std::nullopt);
    /// All-frames conditioning without cameras.
    GenerationResult reconstruct(const std::vector<Image>& frames, std::optional<int> descriptor,
                                 const std::string& scene = "", std::optional<SamplerOptions> sampler = std::nullopt);
    /// RGB-only generation followed by the frozen surrogate on the generated frames.
    GenerationResult two_stage_baseline(const GenerateRequest& request,
                                        std::optional<SamplerOptions> sampler = std::nullopt);

    /// Geometry outputs of the frozen surrogate on real frames, unprojected like a generation result.
    GenerationResult surrogate_reconstruction(const std::vector<Image>& frames, const std::string& scene = "");

    /// Training scenes of the configured splits.
    std::vector<SceneTensors> training_scenes() const;
    std::vector<RenderedSequence> load_scenes(const std::vector<std::string>& splits) const;

    /// Channel gates of an adapter stage's latents over the training scenes.
    LatentGateReport inspect_latents(Stage adapter_stage);
    /// Pooled appearance and geometry posterior-mean channel tables.
    Json latent_tables(Stage adapter_stage);

    AppearanceCodec& codec();
    ReconSurrogate& surrogate();
    const LatentPriorStats& prior();
    GeometryAdapter& adapter(Stage stage = Stage::Adapter);
    JointDiT& diffusion(Stage stage = Stage::Diffusion);

private:
    void check_prerequisites(Stage stage) const;
    Json read_stage_record(Stage stage) const;
    StageRecord execute(Stage stage);
    GenerationResult decode_result(const torch::Tensor& z, bool joint, const Json& provenance);
    GenerationResult sample(Stage model_stage, const torch::Tensor& images, const torch::Tensor& frame_mask,
                            const std::optional<std::vector<CameraPose>>& cameras, std::optional<int> descriptor,
                            const SamplerOptions& sampler, Json provenance);
    GenerationResult finish_geometry(std::vector<Image> frames, const GeometryOutputs& geo, Json provenance) const;
    void check_request_frames(const std::vector<Image>& images) const;

    ExperimentConfig config_;
    std::optional<AppearanceCodec> codec_;
    std::optional<ReconSurrogate> surrogate_;
    std::optional<LatentPriorStats> prior_;
    std::map<Stage, GeometryAdapter> adapters_;
    std::map<Stage, JointDiT> diffusions_;
};

/// Applies the process-wide thread count and deterministic-kernel settings.
void configure_torch(int threads);

/// (N, 3, H, W) tensor in [0, 1] <-> images.
torch::Tensor images_to_tensor(const std::vector<Image>& images);
std::vector<Image> tensor_to_images(const torch::Tensor& images);

/// Pixels kept in a generated cloud: confidence >= threshold and >= the given quantile of all confidences.
torch::Tensor confidence_validity(const torch::Tensor& confidence, double quantile, double threshold);

}  // namespace geolat
