#pragma once

#include "geolat/models.hpp"
#include "geolat/scene.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace geolat {

/// One scene as tensors: images (N, 3, H, W) in [0, 1], depth / validity (N, H, W), points (N, H, W, 3), cameras (N, 9).
struct SceneTensors {
    std::string id;
    torch::Tensor images;
    torch::Tensor depth;
    torch::Tensor validity;
    torch::Tensor points;
    torch::Tensor cameras;
    int descriptor = 0;
};

SceneTensors to_tensors(const RenderedSequence& seq, const std::string& id = "");

/// Column-named rows appended once per logged step.
struct LossCurve {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    void write_csv(const std::filesystem::path& path) const;
    static LossCurve read_csv(const std::filesystem::path& path);
    /// Mean of a column over the first / last `window` rows.
    double head_mean(const std::string& column, size_t window) const;
    double tail_mean(const std::string& column, size_t window) const;
};

/// Cosine one-cycle learning rate: warm up from lr/25 over `warmup` of the run, then anneal to lr/25e4.
double one_cycle_lr(int step, int total, double max_lr, double warmup = 0.05);

struct CodecTrainOptions {
    CodecConfig model;
    int steps = 2400;
    double lr = 1e-3;
    double beta = 1e-6;  // weight of the KL summed over latent elements
    std::uint64_t seed = 1;
};

struct SurrogateTrainOptions {
    SurrogateConfig model;
    int steps = 2400;
    double lr = 1e-3;
    double validity_weight = 0.1;
    std::uint64_t seed = 2;
};

struct AdapterTrainOptions {
    AdapterConfig model;
    int steps = 2000;
    double lr = 1e-3;
    double lambda1 = 1.0;
    double lambda2 = 0.2;
    std::uint64_t seed = 3;
};

struct DiffusionTrainOptions {
    DiTConfig model;
    int steps = 3000;
    double lr = 1e-3;
    bool rgb_only = false;
    bool sample_latents = false;  // regress posterior samples instead of means
    std::uint64_t seed = 4;
};

template <typename Model>
struct Trained {
    Model model{nullptr};
    LossCurve curve;
    Json metrics = Json::object();
};

Trained<AppearanceCodec> train_codec(const std::vector<SceneTensors>& scenes, const CodecTrainOptions& opts);
Trained<ReconSurrogate> pretrain_surrogate(const std::vector<SceneTensors>& scenes, const SurrogateTrainOptions& opts);

/// Posterior means of every scene, concatenated along the latent-frame axis.
torch::Tensor appearance_means(AppearanceCodec& codec, const std::vector<SceneTensors>& scenes);

Trained<GeometryAdapter> train_adapter(ReconSurrogate& surrogate, const LatentPriorStats& prior,
                                       const std::vector<SceneTensors>& scenes, const AdapterTrainOptions& opts);

/// Trains the joint model; with rgb_only the geometry half of the target is zero and excluded from the loss.
Trained<JointDiT> train_diffusion(AppearanceCodec& codec, ReconSurrogate* surrogate, GeometryAdapter* adapter,
                                  const LatentPriorStats& prior, const std::vector<SceneTensors>& scenes,
                                  const DiffusionTrainOptions& opts);

/// Aggregate-posterior channel statistics of geometry latents against the appearance prior.
struct LatentGateReport {
    std::vector<double> mean_deviation_sigma;  // (mean_G - mu_A) / sigma_A
    std::vector<double> variance_ratio;        // (Var(means) + E[s^2]) / sigma_A^2
    std::vector<double> mean_variance_ratio;   // Var(means) / sigma_A^2
    double mean_tolerance = 0.5;
    double ratio_low = 0.5;
    double ratio_high = 2.0;
    bool passes = false;
    double max_abs_deviation = 0.0;

    Json to_json() const;
};

LatentGateReport latent_gates(const std::vector<Posterior>& posteriors, const LatentPriorStats& prior);

/// ||V_hat - V||^2 / ||V - mean(V)||^2 through the posterior mean.
double relative_token_error(GeometryAdapter& adapter, const torch::Tensor& tokens);

struct SurrogateDiagnostics {
    double depth_mae = 0.0;                 // mean over scenes, valid pixels
    double relative_depth_mae = 0.0;        // depth MAE / mean ground-truth depth
    double max_relative_depth_mae = 0.0;
    double first_camera_rotation_deg = 0.0; // worst deviation of frame 0 from identity
    double first_camera_translation = 0.0;
    double unprojection_gap = 0.0;          // predicted pointmap vs unprojected predicted depth

    Json to_json() const;
};

SurrogateDiagnostics surrogate_diagnostics(ReconSurrogate& surrogate, const std::vector<SceneTensors>& scenes);

/// Normalized diffusion targets of one scene; geometry is zero without an adapter.
struct DiffusionTargets {
    torch::Tensor appearance;
    torch::Tensor geometry;
};

DiffusionTargets diffusion_targets(AppearanceCodec& codec, ReconSurrogate* surrogate, GeometryAdapter* adapter,
                                   const LatentPriorStats& prior, const SceneTensors& scene, bool sample_latents,
                                   std::optional<at::Generator> gen = std::nullopt);

std::vector<CameraPose> cameras_from_tensor(const torch::Tensor& cameras);
torch::Tensor cameras_to_tensor(std::span<const CameraPose> cameras);
/// (H, W) depth and validity tensors -> DepthMap.
DepthMap depth_from_tensor(const torch::Tensor& depth, const torch::Tensor& valid);

}  // namespace geolat
