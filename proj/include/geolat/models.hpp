#pragma once

#include "geolat/io.hpp"
#include "geolat/shapes.hpp"

#include <torch/torch.h>

#include <functional>
#include <optional>
#include <string>
#include <vector>

// Tensor layouts: images and feature maps are (frames, channels, height, width);
// geometry tokens are (N, L, h_v, w_v, C); latents are (n, c, h, w).

namespace geolat {

/// (N, C, H, W) -> (n, 4C, H, W): latent frame 0 stacks frame 0 four times, frame k stacks 4k-3..4k.
torch::Tensor temporal_pack(const torch::Tensor& x);
/// Inverse of temporal_pack; latent frame 0 contributes only its first copy.
torch::Tensor temporal_unpack(const torch::Tensor& y);

/// Convolution over latent frames with a kernel of two: current plus previous frame (zero before frame 0).
class CausalConvImpl : public torch::nn::Module {
public:
    CausalConvImpl(int in_channels, int out_channels);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d current_{nullptr};
    torch::nn::Conv2d previous_{nullptr};
};
TORCH_MODULE(CausalConv);

/// Diagonal Gaussian posterior; logvar is clamped to [-30, 20].
struct Posterior {
    torch::Tensor mean;
    torch::Tensor logvar;

    torch::Tensor sample(std::optional<at::Generator> gen = std::nullopt) const;
};

// ---------------------------------------------------------------- appearance codec

struct CodecConfig {
    int latent_channels = 8;
    int base_channels = 32;
    double logvar_init = -8.0;

    Json to_json() const;
    static CodecConfig from_json(const Json& j);
};

class AppearanceCodecImpl : public torch::nn::Module {
public:
    explicit AppearanceCodecImpl(const CodecConfig& config = {});

    /// images: (N, 3, H, W) in [-1, 1] with N = 1 + 4k and H, W multiples of 8.
    Posterior encode(const torch::Tensor& images);
    /// latents: (n, c, h, w) -> unclamped (N, 3, 8h, 8w).
    torch::Tensor decode(const torch::Tensor& latents);

    const CodecConfig& config() const { return config_; }

private:
    CodecConfig config_;
    torch::nn::Sequential encoder_{nullptr};
    CausalConv temporal_mix_{nullptr};
    torch::nn::Conv2d moments_{nullptr};
    torch::nn::Conv2d decoder_in_{nullptr};
    CausalConv decoder_temporal_{nullptr};
    torch::nn::Sequential decoder_{nullptr};
};
TORCH_MODULE(AppearanceCodec);

/// Maps [0, 1] images through the fixed affine to [-1, 1] and encodes them.
Posterior encode_appearance(AppearanceCodec& codec, const torch::Tensor& images01);
/// Decodes, clamps to [-1, 1], and maps back to [0, 1].
torch::Tensor decode_appearance(AppearanceCodec& codec, const torch::Tensor& latents);

// ---------------------------------------------------------------- reconstruction surrogate

struct SurrogateConfig {
    int image_size = 64;
    int patch = 8;
    int channels = 64;
    int blocks = 8;
    int heads = 4;
    std::vector<int> taps = {1, 3, 5, 7};
    int head_channels = 64;

    int grid() const { return image_size / patch; }
    int levels() const { return static_cast<int>(taps.size()) + 1; }

    void validate() const;
    Json to_json() const;
    static SurrogateConfig from_json(const Json& j);
};

struct GeometryOutputs {
    torch::Tensor points;          // (N, H, W, 3)
    torch::Tensor depth;           // (N, H, W)
    torch::Tensor cameras;         // (N, 9)
    torch::Tensor confidence;      // (N, H, W) in (0, 1)
    torch::Tensor validity_logit;  // (N, H, W)
};

class TransformerBlockImpl : public torch::nn::Module {
public:
    TransformerBlockImpl(int width, int heads);
    /// x: (B, T, C)
    torch::Tensor forward(const torch::Tensor& x);

private:
    int heads_;
    torch::nn::LayerNorm norm1_{nullptr};
    torch::nn::Linear qkv_{nullptr};
    torch::nn::Linear proj_{nullptr};
    torch::nn::LayerNorm norm2_{nullptr};
    torch::nn::Linear fc1_{nullptr};
    torch::nn::Linear fc2_{nullptr};
};
TORCH_MODULE(TransformerBlock);

class ReconSurrogateImpl : public torch::nn::Module {
public:
    explicit ReconSurrogateImpl(const SurrogateConfig& config = {});

    /// images: (N, 3, H, W) in [0, 1] -> tokens (N, L, h_v, w_v, C); level L-1 is the broadcast camera token.
    torch::Tensor encode_views(const torch::Tensor& images01);
    GeometryOutputs decode_tokens(const torch::Tensor& tokens);

    const SurrogateConfig& config() const { return config_; }

private:
    SurrogateConfig config_;
    torch::nn::Conv2d patch_embed_{nullptr};
    torch::Tensor pos_embed_;
    torch::Tensor first_camera_token_;
    torch::Tensor other_camera_token_;
    torch::nn::ModuleList blocks_{nullptr};
    torch::nn::Conv2d fuse_{nullptr};
    torch::nn::Sequential upsample_{nullptr};
    torch::nn::Sequential camera_head_{nullptr};
};
TORCH_MODULE(ReconSurrogate);

// ---------------------------------------------------------------- appearance prior

struct LatentPriorStats {
    std::vector<double> mean;
    std::vector<double> variance;
    std::int64_t count = 0;
    bool floored = false;

    static constexpr double kVarianceFloor = 1e-6;
    static constexpr std::int64_t kMinSamples = 1000;

    torch::Tensor mean_tensor(torch::ScalarType dtype = torch::kFloat32) const;      // (1, c, 1, 1)
    torch::Tensor variance_tensor(torch::ScalarType dtype = torch::kFloat32) const;  // (1, c, 1, 1)
    Json to_json() const;
    static LatentPriorStats from_json(const Json& j);
};

/// Per-channel mean / population variance over dims (0, 2, 3) of (B, c, h, w) posterior means.
LatentPriorStats fit_appearance_prior(const torch::Tensor& latents);

/// Element-averaged KL( N(mean, exp(logvar)) || N(mu_A, sigma_A^2) ).
torch::Tensor kl_to_prior(const Posterior& posterior, const LatentPriorStats& prior);

// ---------------------------------------------------------------- geometry adapter

struct AdapterConfig {
    int levels = 5;
    int token_channels = 64;
    int token_grid = 8;
    int latent_channels = 8;
    int latent_grid = 8;
    int hidden = 128;
    int frame_channels = 64;
    double logvar_init = -8.0;

    int input_channels() const { return adapter_input_channels(levels, token_channels); }
    Json to_json() const;
    static AdapterConfig from_json(const Json& j);
    /// Throws ConfigMismatch unless the token layout matches the surrogate's.
    void check_compatible(const SurrogateConfig& surrogate) const;
};

class GeometryAdapterImpl : public torch::nn::Module {
public:
    explicit GeometryAdapterImpl(const AdapterConfig& config = {});

    /// tokens: (N, L, h_v, w_v, C) -> posterior over (n, c, h, w).
    Posterior encode(const torch::Tensor& tokens);
    /// latents: (n, c, h, w) -> tokens (N, L, h_v, w_v, C).
    torch::Tensor decode(const torch::Tensor& latents);

    const AdapterConfig& config() const { return config_; }

private:
    AdapterConfig config_;
    torch::nn::Conv2d enc_in_{nullptr};
    torch::nn::Conv2d enc_frame_{nullptr};
    CausalConv enc_temporal_{nullptr};
    torch::nn::Conv2d enc_moments_{nullptr};
    torch::nn::Conv2d dec_in_{nullptr};
    CausalConv dec_temporal_{nullptr};
    torch::nn::Conv2d dec_frame_{nullptr};
    torch::nn::Conv2d dec_out_{nullptr};
};
TORCH_MODULE(GeometryAdapter);

struct AdapterLossReport {
    double token_mse = 0.0;
    double camera_l1 = 0.0;
    double depth_mse = 0.0;
    double point_mse = 0.0;
    double kl = 0.0;
    double total = 0.0;
    double lambda1 = 1.0;
    double lambda2 = 0.0;
};

struct AdapterLossTerms {
    torch::Tensor token_mse;
    torch::Tensor camera_l1;
    torch::Tensor depth_mse;
    torch::Tensor point_mse;
    torch::Tensor kl;
    torch::Tensor total;
    double lambda1 = 1.0;
    double lambda2 = 0.0;

    AdapterLossReport report() const;
};

/**
 * total = lambda1 * (token_mse + camera_l1 + depth_mse + point_mse) + lambda2 * kl.
 * Depth and point terms average over pixels where `validity` is nonzero (all pixels when undefined).
 */
AdapterLossTerms adapter_loss(const torch::Tensor& tokens, const torch::Tensor& tokens_hat,
                              const GeometryOutputs& decoded, const GeometryOutputs& reference,
                              const torch::Tensor& validity, const Posterior& posterior,
                              const LatentPriorStats& prior, double lambda1, double lambda2);

// ---------------------------------------------------------------- joint diffusion transformer

struct DiTConfig {
    int latent_channels = 8;
    int width = 128;
    int heads = 4;
    int blocks = 6;
    int patch = 2;
    int num_classes = 8;
    int frames = 9;
    double descriptor_drop = 0.2;
    double camera_drop = 0.5;

    int input_channels() const { return model_input_channels(latent_channels); }
    int head_dim() const { return width / heads; }
    /// Rotary dimensions given to (frame, y, x) axes; each even, summing to head_dim.
    std::array<int, 3> rope_dims() const;
    void validate() const;
    Json to_json() const;
    static DiTConfig from_json(const Json& j);
};

/// Position triplets (f, y, x) for an n x h x w_double token grid; right-half x is shifted by -w_double/2.
torch::Tensor rope_positions(int n, int h, int w_double);

/// Conditioning for one sequence. An undefined camera tensor is treated as dropped.
struct DiffusionConditioning {
    int descriptor = 0;
    bool descriptor_dropped = false;
    torch::Tensor cameras;  // (N, 9)
    bool camera_dropped = true;
};

class DiTBlockImpl : public torch::nn::Module {
public:
    DiTBlockImpl(int width, int heads);
    /// x, cond: (T, d); cos/sin: (T, head_dim / 2).
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& cond, const torch::Tensor& cos,
                          const torch::Tensor& sin);
    /// Pre-softmax attention logits (heads, T, T) for probing.
    torch::Tensor attention_logits(const torch::Tensor& x, const torch::Tensor& cond, const torch::Tensor& cos,
                                   const torch::Tensor& sin);

private:
    std::pair<torch::Tensor, torch::Tensor> query_key(const torch::Tensor& h, const torch::Tensor& cos,
                                                      const torch::Tensor& sin);
    int heads_;
    torch::nn::LayerNorm norm1_{nullptr};
    torch::nn::Linear qkv_{nullptr};
    torch::nn::Linear proj_{nullptr};
    torch::nn::LayerNorm norm2_{nullptr};
    torch::nn::Linear fc1_{nullptr};
    torch::nn::Linear fc2_{nullptr};
    torch::nn::Linear modulation_{nullptr};
};
TORCH_MODULE(DiTBlock);

class JointDiTImpl : public torch::nn::Module {
public:
    explicit JointDiTImpl(const DiTConfig& config = {});

    /// z_in: (n, 2c + 4, h, 2w); t in [0, 1]. Returns the velocity (n, c, h, 2w).
    torch::Tensor forward(const torch::Tensor& z_in, double t, const DiffusionConditioning& cond);
    /// Per-frame camera embedding (N, d); dropped cameras give the learned null vector.
    torch::Tensor camera_embedding(const torch::Tensor& cameras, bool drop);
    /// Per-latent-frame conditioning vector (n, d) = timestep + descriptor + grouped camera embedding.
    torch::Tensor frame_conditioning(int latent_frames, double t, const DiffusionConditioning& cond);
    /// Attention logits of the first block, for the rotary half-sharing probe.
    torch::Tensor first_block_logits(const torch::Tensor& z_in, double t, const DiffusionConditioning& cond);

    const DiTConfig& config() const { return config_; }

private:
    torch::Tensor tokens(const torch::Tensor& z_in);
    std::pair<torch::Tensor, torch::Tensor> rope_tables(int n, int hp, int wp, torch::ScalarType dtype);
    torch::Tensor token_conditioning(const torch::Tensor& z_in, double t, const DiffusionConditioning& cond);

    DiTConfig config_;
    torch::nn::Linear input_{nullptr};
    torch::nn::Linear time1_{nullptr};
    torch::nn::Linear time2_{nullptr};
    torch::nn::Embedding descriptor_table_{nullptr};
    torch::nn::Linear camera1_{nullptr};
    torch::nn::Linear camera2_{nullptr};
    torch::Tensor camera_null_;
    torch::nn::Linear camera_group_{nullptr};
    torch::nn::ModuleList blocks_{nullptr};
    torch::nn::LayerNorm final_norm_{nullptr};
    torch::nn::Linear final_modulation_{nullptr};
    torch::nn::Linear output_{nullptr};
};
TORCH_MODULE(JointDiT);

/// Width concatenation [A ; G] of two (n, c, h, w) latents.
torch::Tensor make_joint_latent(const torch::Tensor& a, const torch::Tensor& g);
std::pair<torch::Tensor, torch::Tensor> split_joint_latent(const torch::Tensor& z);

using VelocityFn = std::function<torch::Tensor(const torch::Tensor& z_in, double t)>;

/**
 * Rectified-flow loss: z_t = (1 - t) z0 + t noise, target = noise - z0,
 * loss = weighted mean of (v - target)^2 where v = velocity(z_t (+) z_cond, t).
 * `weight` (broadcastable to z0, optional) zeroes excluded coordinates.
 */
torch::Tensor flow_matching_loss(const VelocityFn& velocity, const torch::Tensor& z0, const torch::Tensor& z_cond,
                                 double t, const torch::Tensor& noise, const torch::Tensor& weight = {});

struct SamplerOptions {
    int steps = 25;
    double cfg_scale = 1.0;
    std::uint64_t seed = 0;
};

/// Euler integration from t = 1 to t = 0 with classifier-free guidance on the descriptor.
torch::Tensor sample_joint(JointDiT& model, const torch::Tensor& z_cond, const DiffusionConditioning& cond,
                           const SamplerOptions& opts);
/// Same integration given an explicit starting noise tensor.
torch::Tensor sample_from_noise(JointDiT& model, const torch::Tensor& noise, const torch::Tensor& z_cond,
                                const DiffusionConditioning& cond, int steps, double cfg_scale);

// ---------------------------------------------------------------- condition latents

/// (N, 1, H, W) pixel mask -> (n, 4, H/8, W/8) via the frame grouping law and 8x8 strided max.
torch::Tensor latent_mask(const torch::Tensor& pixel_mask);

/// Normalizes latents channel-wise with the appearance prior: (z - mu_A) / sigma_A.
torch::Tensor normalize_latent(const torch::Tensor& z, const LatentPriorStats& prior);
torch::Tensor denormalize_latent(const torch::Tensor& z, const LatentPriorStats& prior);

/// Z_cond = [A_cond (+) M_a ; zeros (+) zeros]. images01: (N, 3, H, W); frame_mask: (N) of 0/1.
torch::Tensor build_condition(AppearanceCodec& codec, const LatentPriorStats& prior, const torch::Tensor& images01,
                              const torch::Tensor& frame_mask);

// ---------------------------------------------------------------- checkpoints

/// Single-file container: magic, JSON manifest (names, shapes, config), raw float32 payload.
void save_checkpoint(const std::filesystem::path& path, const torch::nn::Module& module, const Json& config,
                     const Json& extra = Json::object());
/// Loads parameters in place and returns the manifest.
Json load_checkpoint(const std::filesystem::path& path, torch::nn::Module& module);
Json read_checkpoint_manifest(const std::filesystem::path& path);
/// SHA-256 over parameter and buffer names, shapes, and float32 values.
std::string parameter_hash(const torch::nn::Module& module);

/// Makes every parameter non-trainable.
void freeze(torch::nn::Module& module);

}  // namespace geolat
