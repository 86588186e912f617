#include "geolat/errors.hpp"
#include "geolat/models.hpp"

#include <cmath>
#include <numbers>

namespace geolat {

void SurrogateConfig::validate() const {
    if (patch < 1 || image_size % patch != 0) {
        throw InvalidInput("surrogate: image size must be divisible by the patch size");
    }
    if (patch & (patch - 1)) {
        throw InvalidInput("surrogate: patch size must be a power of two");
    }
    if (channels % heads != 0) {
        throw InvalidInput("surrogate: channels must be divisible by heads");
    }
    for (int t : taps) {
        if (t < 0 || t >= blocks) {
            throw InvalidInput("surrogate: tap index outside the block range");
        }
    }
    if (taps.empty()) {
        throw InvalidInput("surrogate: at least one tap is required");
    }
}

Json SurrogateConfig::to_json() const {
    return Json{{"image_size", image_size}, {"patch", patch},   {"channels", channels},          {"blocks", blocks},
                {"heads", heads},           {"taps", taps},     {"head_channels", head_channels}};
}

SurrogateConfig SurrogateConfig::from_json(const Json& j) {
    SurrogateConfig c;
    c.image_size = j.value("image_size", c.image_size);
    c.patch = j.value("patch", c.patch);
    c.channels = j.value("channels", c.channels);
    c.blocks = j.value("blocks", c.blocks);
    c.heads = j.value("heads", c.heads);
    c.taps = j.value("taps", c.taps);
    c.head_channels = j.value("head_channels", c.head_channels);
    c.validate();
    return c;
}

TransformerBlockImpl::TransformerBlockImpl(int width, int heads) : heads_(heads) {
    norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
    qkv_ = register_module("qkv", torch::nn::Linear(width, 3 * width));
    proj_ = register_module("proj", torch::nn::Linear(width, width));
    norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
    fc1_ = register_module("fc1", torch::nn::Linear(width, 4 * width));
    fc2_ = register_module("fc2", torch::nn::Linear(4 * width, width));
}

torch::Tensor TransformerBlockImpl::forward(const torch::Tensor& x) {
    const int64_t b = x.size(0), t = x.size(1), d = x.size(2);
    auto h = norm1_->forward(x);
    auto qkv = qkv_->forward(h).reshape({b, t, 3, heads_, d / heads_}).permute({2, 0, 3, 1, 4});
    auto a = at::scaled_dot_product_attention(qkv[0], qkv[1], qkv[2]);
    auto out = x + proj_->forward(a.permute({0, 2, 1, 3}).reshape({b, t, d}));
    return out + fc2_->forward(torch::gelu(fc1_->forward(norm2_->forward(out))));
}

ReconSurrogateImpl::ReconSurrogateImpl(const SurrogateConfig& config) : config_(config) {
    config_.validate();
    const int c = config.channels;
    const int grid = config.grid();
    patch_embed_ = register_module(
        "patch_embed", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, c, config.patch).stride(config.patch)));
    pos_embed_ = register_parameter("pos_embed", torch::randn({1, grid * grid, c}) * 0.02);
    first_camera_token_ = register_parameter("first_camera_token", torch::randn({1, 1, c}) * 0.02);
    other_camera_token_ = register_parameter("other_camera_token", torch::randn({1, 1, c}) * 0.02);
    blocks_ = register_module("blocks", torch::nn::ModuleList());
    for (int i = 0; i < config.blocks; ++i) {
        blocks_->push_back(TransformerBlock(c, config.heads));
    }
    const int hc = config.head_channels;
    fuse_ = register_module("fuse", torch::nn::Conv2d(torch::nn::Conv2dOptions((config.levels() - 1) * c, hc, 1)));

    upsample_ = register_module("upsample", torch::nn::Sequential());
    int ch = hc;
    for (int s = config.patch; s > 1; s /= 2) {
        const int next = std::max(16, ch / 2);
        upsample_->push_back(torch::nn::SiLU());
        upsample_->push_back(torch::nn::Upsample(torch::nn::UpsampleOptions()
                                                     .scale_factor(std::vector<double>{2.0, 2.0})
                                                     .mode(torch::kBilinear)
                                                     .align_corners(false)));
        upsample_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, next, 3).padding(1)));
        ch = next;
    }
    upsample_->push_back(torch::nn::SiLU());
    upsample_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, 5, 3).padding(1)));

    camera_head_ = register_module(
        "camera_head", torch::nn::Sequential(torch::nn::LayerNorm(torch::nn::LayerNormOptions({c})),
                                             torch::nn::Linear(c, c), torch::nn::GELU(), torch::nn::Linear(c, 9)));
}

torch::Tensor ReconSurrogateImpl::encode_views(const torch::Tensor& images01) {
    if (images01.dim() != 4 || images01.size(1) != 3 || images01.size(2) != config_.image_size ||
        images01.size(3) != config_.image_size) {
        throw InvalidInput("encode_views: expected (N, 3, S, S) images at the configured resolution");
    }
    const int64_t n = images01.size(0);
    const int64_t c = config_.channels;
    const int64_t grid = config_.grid();
    auto patches = patch_embed_->forward(images01 * 2.0 - 1.0).flatten(2).transpose(1, 2) + pos_embed_;
    std::vector<torch::Tensor> cams = {first_camera_token_};
    if (n > 1) {
        cams.push_back(other_camera_token_.expand({n - 1, 1, c}));
    }
    auto x = torch::cat({torch::cat(cams, 0), patches}, 1);
    const int64_t tokens = x.size(1);

    std::vector<torch::Tensor> levels;
    for (int i = 0; i < config_.blocks; ++i) {
        auto block = blocks_->ptr<TransformerBlockImpl>(i);
        if (i % 2 == 0) {
            x = block->forward(x);
        } else {
            x = block->forward(x.reshape({1, n * tokens, c})).reshape({n, tokens, c});
        }
        if (std::find(config_.taps.begin(), config_.taps.end(), i) != config_.taps.end()) {
            levels.push_back(x.slice(1, 1, tokens));
        }
    }
    levels.push_back(x.slice(1, 0, 1).expand({n, grid * grid, c}));
    return torch::stack(levels, 1).reshape({n, config_.levels(), grid, grid, c});
}

GeometryOutputs ReconSurrogateImpl::decode_tokens(const torch::Tensor& tokens) {
    const int64_t grid = config_.grid();
    const int64_t c = config_.channels;
    const int levels = config_.levels();
    if (tokens.dim() != 5 || tokens.size(1) != levels || tokens.size(2) != grid || tokens.size(3) != grid ||
        tokens.size(4) != c) {
        throw InvalidInput("decode_tokens: token shape does not match the surrogate configuration");
    }
    const int64_t n = tokens.size(0);
    auto feats = tokens.slice(1, 0, levels - 1).permute({0, 1, 4, 2, 3}).reshape({n, (levels - 1) * c, grid, grid});
    auto o = upsample_->forward(fuse_->forward(feats));

    GeometryOutputs out;
    out.points = o.slice(1, 0, 3).permute({0, 2, 3, 1});
    out.depth = torch::exp(o.select(1, 3).clamp(-6.0, 6.0));
    out.validity_logit = o.select(1, 4).clamp(-15.0, 15.0);
    out.confidence = torch::sigmoid(out.validity_logit);

    auto cam = camera_head_->forward(tokens.select(1, levels - 1).mean({1, 2}));
    auto q = cam.slice(1, 0, 4);
    q = q / q.norm(2, 1, true).clamp_min(1e-12);
    auto fov = std::numbers::pi * torch::sigmoid(cam.slice(1, 7, 9).clamp(-15.0, 15.0));
    out.cameras = torch::cat({q, cam.slice(1, 4, 7), fov}, 1);
    return out;
}

}  // namespace geolat
