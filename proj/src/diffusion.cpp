#include "geolat/errors.hpp"
#include "geolat/models.hpp"

#include <cmath>

namespace geolat {

namespace F = torch::nn::functional;

// ---------------------------------------------------------------- config and positions

std::array<int, 3> DiTConfig::rope_dims() const {
    const int hd = head_dim();
    const int spatial = (hd / 3) / 2 * 2;
    return {hd - 2 * spatial, spatial, spatial};
}

void DiTConfig::validate() const {
    if (width % heads != 0) {
        throw InvalidInput("diffusion width must be divisible by heads");
    }
    if (head_dim() % 2 != 0) {
        throw InvalidInput("diffusion head dimension must be even");
    }
    for (int d : rope_dims()) {
        if (d <= 0 || d % 2 != 0) {
            throw InvalidInput("diffusion head dimension too small for 3-axis rotary embedding");
        }
    }
    latent_frame_count(frames);
}

Json DiTConfig::to_json() const {
    return Json{{"latent_channels", latent_channels}, {"width", width},       {"heads", heads},
                {"blocks", blocks},                   {"patch", patch},       {"num_classes", num_classes},
                {"frames", frames},                   {"descriptor_drop", descriptor_drop},
                {"camera_drop", camera_drop}};
}

DiTConfig DiTConfig::from_json(const Json& j) {
    DiTConfig c;
    c.latent_channels = j.value("latent_channels", c.latent_channels);
    c.width = j.value("width", c.width);
    c.heads = j.value("heads", c.heads);
    c.blocks = j.value("blocks", c.blocks);
    c.patch = j.value("patch", c.patch);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.frames = j.value("frames", c.frames);
    c.descriptor_drop = j.value("descriptor_drop", c.descriptor_drop);
    c.camera_drop = j.value("camera_drop", c.camera_drop);
    c.validate();
    return c;
}

torch::Tensor rope_positions(int n, int h, int w_double) {
    if (w_double % 2 != 0) {
        throw InvalidInput("rope_positions: joint width must be even");
    }
    const int half = w_double / 2;
    auto pos = torch::empty({static_cast<int64_t>(n) * h * w_double, 3}, torch::kInt64);
    auto acc = pos.accessor<int64_t, 2>();
    int64_t i = 0;
    for (int f = 0; f < n; ++f) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w_double; ++x, ++i) {
                acc[i][0] = f;
                acc[i][1] = y;
                acc[i][2] = x >= half ? x - half : x;
            }
        }
    }
    return pos;
}

namespace {

torch::Tensor apply_rope(const torch::Tensor& x, const torch::Tensor& cos, const torch::Tensor& sin) {
    const auto x1 = x.slice(-1, 0, x.size(-1), 2);
    const auto x2 = x.slice(-1, 1, x.size(-1), 2);
    return torch::stack({x1 * cos - x2 * sin, x1 * sin + x2 * cos}, -1).flatten(-2);
}

void zero_linear(torch::nn::Linear& l) {
    torch::NoGradGuard guard;
    l->weight.zero_();
    l->bias.zero_();
}

}  // namespace

// ---------------------------------------------------------------- blocks

DiTBlockImpl::DiTBlockImpl(int width, int heads) : heads_(heads) {
    norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width}).elementwise_affine(false)));
    qkv_ = register_module("qkv", torch::nn::Linear(width, 3 * width));
    proj_ = register_module("proj", torch::nn::Linear(width, width));
    norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width}).elementwise_affine(false)));
    fc1_ = register_module("fc1", torch::nn::Linear(width, 4 * width));
    fc2_ = register_module("fc2", torch::nn::Linear(4 * width, width));
    modulation_ = register_module("modulation", torch::nn::Linear(width, 6 * width));
    zero_linear(modulation_);
}

std::pair<torch::Tensor, torch::Tensor> DiTBlockImpl::query_key(const torch::Tensor& h, const torch::Tensor& cos,
                                                                const torch::Tensor& sin) {
    const int64_t t = h.size(0), d = h.size(1);
    auto qkv = qkv_->forward(h).reshape({t, 3, heads_, d / heads_}).permute({1, 2, 0, 3});
    return {apply_rope(qkv[0], cos, sin), apply_rope(qkv[1], cos, sin)};
}

torch::Tensor DiTBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& cond, const torch::Tensor& cos,
                                    const torch::Tensor& sin) {
    const int64_t t = x.size(0), d = x.size(1);
    auto mod = modulation_->forward(torch::silu(cond)).chunk(6, -1);
    auto h = norm1_->forward(x) * (1 + mod[1]) + mod[0];
    auto qkv = qkv_->forward(h).reshape({t, 3, heads_, d / heads_}).permute({1, 2, 0, 3});
    auto q = apply_rope(qkv[0], cos, sin);
    auto k = apply_rope(qkv[1], cos, sin);
    auto a = at::scaled_dot_product_attention(q, k, qkv[2]).permute({1, 0, 2}).reshape({t, d});
    auto out = x + mod[2] * proj_->forward(a);
    h = norm2_->forward(out) * (1 + mod[4]) + mod[3];
    return out + mod[5] * fc2_->forward(torch::gelu(fc1_->forward(h)));
}

torch::Tensor DiTBlockImpl::attention_logits(const torch::Tensor& x, const torch::Tensor& cond,
                                             const torch::Tensor& cos, const torch::Tensor& sin) {
    auto mod = modulation_->forward(torch::silu(cond)).chunk(6, -1);
    auto h = norm1_->forward(x) * (1 + mod[1]) + mod[0];
    auto [q, k] = query_key(h, cos, sin);
    return torch::matmul(q, k.transpose(-1, -2)) / std::sqrt(static_cast<double>(q.size(-1)));
}

// ---------------------------------------------------------------- transformer

JointDiTImpl::JointDiTImpl(const DiTConfig& config) : config_(config) {
    config_.validate();
    const int d = config.width;
    const int p = config.patch;
    input_ = register_module("input", torch::nn::Linear(config.input_channels() * p * p, d));
    time1_ = register_module("time1", torch::nn::Linear(64, d));
    time2_ = register_module("time2", torch::nn::Linear(d, d));
    descriptor_table_ = register_module("descriptor_table", torch::nn::Embedding(config.num_classes + 1, d));
    camera1_ = register_module("camera1", torch::nn::Linear(CameraPose::kVectorSize, d));
    camera2_ = register_module("camera2", torch::nn::Linear(d, d));
    camera_null_ = register_parameter("camera_null", torch::zeros({d}));
    camera_group_ = register_module("camera_group", torch::nn::Linear(kTemporalStride * d, d));
    blocks_ = register_module("blocks", torch::nn::ModuleList());
    for (int i = 0; i < config.blocks; ++i) {
        blocks_->push_back(DiTBlock(d, config.heads));
    }
    final_norm_ = register_module("final_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d}).elementwise_affine(false)));
    final_modulation_ = register_module("final_modulation", torch::nn::Linear(d, 2 * d));
    output_ = register_module("output", torch::nn::Linear(d, config.latent_channels * p * p));
    zero_linear(final_modulation_);
    zero_linear(output_);
}

torch::Tensor JointDiTImpl::tokens(const torch::Tensor& z_in) {
    const int64_t n = z_in.size(0), c = z_in.size(1), h = z_in.size(2), w2 = z_in.size(3);
    const int64_t p = config_.patch;
    if (c != config_.input_channels()) {
        throw InvalidInput("diffusion input has " + std::to_string(c) + " channels, expected 2c + 4 = " +
                           std::to_string(config_.input_channels()));
    }
    if (h % p != 0 || w2 % (2 * p) != 0) {
        throw InvalidInput("diffusion input size is not divisible by the patch size");
    }
    return z_in.reshape({n, c, h / p, p, w2 / p, p}).permute({0, 2, 4, 1, 3, 5}).reshape({n * (h / p) * (w2 / p), c * p * p});
}

std::pair<torch::Tensor, torch::Tensor> JointDiTImpl::rope_tables(int n, int hp, int wp, torch::ScalarType dtype) {
    const auto pos = rope_positions(n, hp, wp).to(torch::kFloat64);
    const auto dims = config_.rope_dims();
    std::vector<torch::Tensor> angles;
    for (int axis = 0; axis < 3; ++axis) {
        const auto k = torch::arange(0, dims[axis], 2, torch::kFloat64);
        const auto inv = torch::pow(10000.0, -k / dims[axis]);
        angles.push_back(pos.select(1, axis).unsqueeze(1) * inv.unsqueeze(0));
    }
    const auto a = torch::cat(angles, 1).unsqueeze(0);
    return {a.cos().to(dtype), a.sin().to(dtype)};
}

torch::Tensor JointDiTImpl::camera_embedding(const torch::Tensor& cameras, bool drop) {
    const int64_t d = config_.width;
    if (drop || !cameras.defined()) {
        const int64_t frames = cameras.defined() ? cameras.size(0) : config_.frames;
        return camera_null_.unsqueeze(0).expand({frames, d});
    }
    if (cameras.dim() != 2 || cameras.size(1) != CameraPose::kVectorSize) {
        throw InvalidInput("camera conditions must be (N, 9)");
    }
    if (!torch::isfinite(cameras).all().item<bool>()) {
        throw InvalidInput("camera conditions contain non-finite values");
    }
    // Canonical sign: first nonzero quaternion component positive.
    auto q = cameras.slice(1, 0, 4);
    auto sign = torch::ones({cameras.size(0), 1}, cameras.options());
    {
        auto qd = q.detach().to(torch::kFloat64).contiguous();
        auto acc = qd.accessor<double, 2>();
        for (int64_t i = 0; i < qd.size(0); ++i) {
            for (int j = 0; j < 4; ++j) {
                if (acc[i][j] != 0.0) {
                    sign[i][0] = acc[i][j] < 0.0 ? -1.0 : 1.0;
                    break;
                }
            }
        }
    }
    auto x = torch::cat({q * sign, cameras.slice(1, 4, CameraPose::kVectorSize)}, 1);
    return camera2_->forward(torch::silu(camera1_->forward(x)));
}

torch::Tensor JointDiTImpl::frame_conditioning(int latent_frames, double t, const DiffusionConditioning& cond) {
    const auto dtype = input_->weight.scalar_type();
    const auto freqs = torch::exp(-std::log(10000.0) * torch::arange(32, torch::kFloat64) / 32.0);
    const auto arg = freqs * (t * 1000.0);
    const auto te = torch::cat({torch::sin(arg), torch::cos(arg)}).to(dtype);
    const auto temb = time2_->forward(torch::silu(time1_->forward(te)));

    if (!cond.descriptor_dropped && (cond.descriptor < 0 || cond.descriptor >= config_.num_classes)) {
        throw InvalidInput("descriptor class out of range");
    }
    const int64_t row = cond.descriptor_dropped ? config_.num_classes : cond.descriptor;
    const auto ye = descriptor_table_->forward(torch::tensor({row}, torch::kInt64)).squeeze(0);

    const int frames = 1 + kTemporalStride * (latent_frames - 1);
    const bool drop = cond.camera_dropped || !cond.cameras.defined();
    if (!drop && cond.cameras.size(0) != frames) {
        throw InvalidInput("camera list length does not match the frame count");
    }
    const auto ce = drop ? camera_null_.unsqueeze(0).expand({frames, config_.width}) : camera_embedding(cond.cameras, false);
    std::vector<torch::Tensor> grouped;
    for (const auto& g : latent_frame_groups(frames)) {
        grouped.push_back(torch::cat({ce[g[0]], ce[g[1]], ce[g[2]], ce[g[3]]}, 0));
    }
    const auto cam = camera_group_->forward(torch::stack(grouped, 0));
    return temb.unsqueeze(0) + ye.unsqueeze(0) + cam;
}

torch::Tensor JointDiTImpl::token_conditioning(const torch::Tensor& z_in, double t, const DiffusionConditioning& cond) {
    const int64_t per_frame = (z_in.size(2) / config_.patch) * (z_in.size(3) / config_.patch);
    return frame_conditioning(static_cast<int>(z_in.size(0)), t, cond).repeat_interleave(per_frame, 0);
}

torch::Tensor JointDiTImpl::forward(const torch::Tensor& z_in, double t, const DiffusionConditioning& cond) {
    const int64_t n = z_in.size(0), h = z_in.size(2), w2 = z_in.size(3);
    const int64_t p = config_.patch;
    auto x = input_->forward(tokens(z_in));
    const auto c = token_conditioning(z_in, t, cond);
    const auto [cos, sin] = rope_tables(static_cast<int>(n), static_cast<int>(h / p), static_cast<int>(w2 / p), x.scalar_type());
    for (size_t i = 0; i < blocks_->size(); ++i) {
        x = blocks_->ptr<DiTBlockImpl>(i)->forward(x, c, cos, sin);
    }
    auto mod = final_modulation_->forward(torch::silu(c)).chunk(2, -1);
    x = output_->forward(final_norm_->forward(x) * (1 + mod[1]) + mod[0]);
    const int64_t lc = config_.latent_channels;
    return x.reshape({n, h / p, w2 / p, lc, p, p}).permute({0, 3, 1, 4, 2, 5}).reshape({n, lc, h, w2});
}

torch::Tensor JointDiTImpl::first_block_logits(const torch::Tensor& z_in, double t, const DiffusionConditioning& cond) {
    const int64_t n = z_in.size(0), h = z_in.size(2), w2 = z_in.size(3);
    const int64_t p = config_.patch;
    auto x = input_->forward(tokens(z_in));
    const auto c = token_conditioning(z_in, t, cond);
    const auto [cos, sin] = rope_tables(static_cast<int>(n), static_cast<int>(h / p), static_cast<int>(w2 / p), x.scalar_type());
    return blocks_->ptr<DiTBlockImpl>(0)->attention_logits(x, c, cos, sin);
}

// ---------------------------------------------------------------- latents, loss, sampling

torch::Tensor make_joint_latent(const torch::Tensor& a, const torch::Tensor& g) {
    if (a.sizes() != g.sizes()) {
        throw InvalidInput("make_joint_latent: appearance and geometry latents differ in shape");
    }
    return torch::cat({a, g}, 3);
}

std::pair<torch::Tensor, torch::Tensor> split_joint_latent(const torch::Tensor& z) {
    if (z.dim() != 4 || z.size(3) % 2 != 0) {
        throw InvalidInput("split_joint_latent: joint width must be even");
    }
    const int64_t w = z.size(3) / 2;
    return {z.slice(3, 0, w), z.slice(3, w, 2 * w)};
}

torch::Tensor flow_matching_loss(const VelocityFn& velocity, const torch::Tensor& z0, const torch::Tensor& z_cond,
                                 double t, const torch::Tensor& noise, const torch::Tensor& weight) {
    if (noise.sizes() != z0.sizes()) {
        throw InvalidInput("flow_matching_loss: noise shape differs from the target");
    }
    const auto zt = (1.0 - t) * z0 + t * noise;
    const auto z_in = z_cond.defined() ? torch::cat({zt, z_cond}, 1) : zt;
    const auto v = velocity(z_in, t);
    const auto err = (v - (noise - z0)).square();
    torch::Tensor loss;
    if (weight.defined()) {
        const auto w = weight.to(err.scalar_type()).expand_as(err);
        loss = (err * w).sum() / w.sum().clamp_min(1e-12);
    } else {
        loss = err.mean();
    }
    if (!torch::isfinite(loss).item<bool>()) {
        throw Divergence("flow-matching loss is not finite");
    }
    return loss;
}

torch::Tensor sample_from_noise(JointDiT& model, const torch::Tensor& noise, const torch::Tensor& z_cond,
                                const DiffusionConditioning& cond, int steps, double cfg_scale) {
    if (steps < 1) {
        throw InvalidInput("sampler needs at least one step");
    }
    const bool guided = cfg_scale != 1.0;
    if (guided && !(model->config().descriptor_drop > 0.0)) {
        throw InvalidInput("classifier-free guidance requested but the model was trained without descriptor drop");
    }
    torch::NoGradGuard guard;
    DiffusionConditioning uncond = cond;
    uncond.descriptor_dropped = true;
    auto z = noise.clone();
    const double dt = 1.0 / steps;
    for (int s = 0; s < steps; ++s) {
        const double t = 1.0 - static_cast<double>(s) / steps;
        const auto z_in = torch::cat({z, z_cond}, 1);
        auto v = model->forward(z_in, t, cond);
        if (guided) {
            const auto vu = model->forward(z_in, t, uncond);
            v = vu + cfg_scale * (v - vu);
        }
        z = z - dt * v;
    }
    return z;
}

torch::Tensor sample_joint(JointDiT& model, const torch::Tensor& z_cond, const DiffusionConditioning& cond,
                           const SamplerOptions& opts) {
    const int64_t c = z_cond.size(1) - kMaskChannels;
    auto gen = at::make_generator<at::CPUGeneratorImpl>(opts.seed);
    const auto noise = at::randn({z_cond.size(0), c, z_cond.size(2), z_cond.size(3)}, gen, z_cond.options());
    return sample_from_noise(model, noise, z_cond, cond, opts.steps, opts.cfg_scale);
}

torch::Tensor latent_mask(const torch::Tensor& pixel_mask) {
    if (pixel_mask.dim() != 4 || pixel_mask.size(1) != 1) {
        throw InvalidInput("latent_mask expects an (N, 1, H, W) mask");
    }
    const auto pooled = F::max_pool2d(pixel_mask, F::MaxPool2dFuncOptions(kSpatialStride).stride(kSpatialStride));
    return temporal_pack(pooled);
}

torch::Tensor normalize_latent(const torch::Tensor& z, const LatentPriorStats& prior) {
    const auto dtype = z.scalar_type();
    return (z - prior.mean_tensor(dtype)) / prior.variance_tensor(dtype).sqrt();
}

torch::Tensor denormalize_latent(const torch::Tensor& z, const LatentPriorStats& prior) {
    const auto dtype = z.scalar_type();
    return z * prior.variance_tensor(dtype).sqrt() + prior.mean_tensor(dtype);
}

torch::Tensor build_condition(AppearanceCodec& codec, const LatentPriorStats& prior, const torch::Tensor& images01,
                              const torch::Tensor& frame_mask) {
    const int64_t frames = images01.size(0);
    if (frame_mask.dim() != 1 || frame_mask.size(0) != frames) {
        throw InvalidInput("frame mask length does not match the image count");
    }
    const auto m = frame_mask.to(images01.scalar_type());
    if (!((m == 0) | (m == 1)).all().item<bool>() || m.sum().item<double>() < 1.0) {
        throw InvalidInput("frame mask must be binary with at least one provided frame");
    }
    const auto pixel_mask = m.view({frames, 1, 1, 1}).expand({frames, 1, images01.size(2), images01.size(3)});
    const auto cond_images = images01 * m.view({frames, 1, 1, 1});
    torch::NoGradGuard guard;
    const auto ma = latent_mask(pixel_mask.contiguous());
    auto a = normalize_latent(encode_appearance(codec, cond_images).mean, prior);
    // Latent frames without any provided input frame carry no appearance information.
    a = a * std::get<0>(ma.max(1, true));
    const auto left = torch::cat({a, ma}, 1);
    return torch::cat({left, torch::zeros_like(left)}, 3);
}

}  // namespace geolat
