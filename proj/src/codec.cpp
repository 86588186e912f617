#include "geolat/errors.hpp"
#include "geolat/models.hpp"

namespace geolat {

namespace F = torch::nn::functional;

torch::Tensor temporal_pack(const torch::Tensor& x) {
    const int frames = static_cast<int>(x.size(0));
    const auto groups = latent_frame_groups(frames);
    std::vector<torch::Tensor> packed;
    packed.reserve(groups.size());
    for (const auto& g : groups) {
        std::vector<torch::Tensor> parts;
        for (int idx : g) {
            parts.push_back(x[idx]);
        }
        packed.push_back(torch::cat(parts, 0));
    }
    return torch::stack(packed, 0);
}

torch::Tensor temporal_unpack(const torch::Tensor& y) {
    const int64_t n = y.size(0);
    if (y.size(1) % kTemporalStride != 0) {
        throw InvalidInput("temporal_unpack: channel count must be divisible by 4");
    }
    const int64_t c = y.size(1) / kTemporalStride;
    std::vector<torch::Tensor> frames;
    frames.push_back(y.slice(0, 0, 1).slice(1, 0, c));
    if (n > 1) {
        frames.push_back(y.slice(0, 1, n).reshape({(n - 1) * kTemporalStride, c, y.size(2), y.size(3)}));
    }
    return torch::cat(frames, 0);
}

CausalConvImpl::CausalConvImpl(int in_channels, int out_channels) {
    current_ = register_module("current", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 3).padding(1)));
    previous_ = register_module(
        "previous", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 3).padding(1).bias(false)));
}

torch::Tensor CausalConvImpl::forward(const torch::Tensor& x) {
    const auto shifted = torch::cat({torch::zeros_like(x.slice(0, 0, 1)), x.slice(0, 0, x.size(0) - 1)}, 0);
    return current_->forward(x) + previous_->forward(shifted);
}

torch::Tensor Posterior::sample(std::optional<at::Generator> gen) const {
    auto eps = at::randn(mean.sizes(), gen, mean.options());
    return mean + eps * torch::exp(0.5 * logvar);
}

Json CodecConfig::to_json() const {
    return Json{{"latent_channels", latent_channels}, {"base_channels", base_channels}, {"logvar_init", logvar_init}};
}

CodecConfig CodecConfig::from_json(const Json& j) {
    CodecConfig c;
    c.latent_channels = j.value("latent_channels", c.latent_channels);
    c.base_channels = j.value("base_channels", c.base_channels);
    c.logvar_init = j.value("logvar_init", c.logvar_init);
    return c;
}

namespace {

torch::nn::Conv2d conv3(int in, int out, int stride = 1) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

torch::nn::Upsample upsample2() {
    return torch::nn::Upsample(torch::nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
}

}  // namespace

AppearanceCodecImpl::AppearanceCodecImpl(const CodecConfig& config) : config_(config) {
    const int b = config.base_channels;
    const int c = config.latent_channels;
    encoder_ = register_module(
        "encoder", torch::nn::Sequential(conv3(3, b), torch::nn::SiLU(), conv3(b, b, 2), torch::nn::SiLU(),
                                         conv3(b, 2 * b, 2), torch::nn::SiLU(), conv3(2 * b, 2 * b, 2),
                                         torch::nn::SiLU(), conv3(2 * b, 2 * b)));
    temporal_mix_ = register_module("temporal_mix", CausalConv(8 * b, 4 * b));
    moments_ = register_module("moments", conv3(4 * b, 2 * c));
    decoder_in_ = register_module("decoder_in", conv3(c, 4 * b));
    decoder_temporal_ = register_module("decoder_temporal", CausalConv(4 * b, 8 * b));
    decoder_ = register_module(
        "decoder",
        torch::nn::Sequential(torch::nn::SiLU(), conv3(2 * b, 2 * b), torch::nn::SiLU(), upsample2(), conv3(2 * b, 2 * b),
                              torch::nn::SiLU(), upsample2(), conv3(2 * b, b), torch::nn::SiLU(), upsample2(),
                              conv3(b, b), torch::nn::SiLU(), conv3(b, 3)));
    torch::NoGradGuard guard;
    moments_->bias.slice(0, c, 2 * c).fill_(config.logvar_init);
}

Posterior AppearanceCodecImpl::encode(const torch::Tensor& images) {
    if (images.dim() != 4 || images.size(1) != 3) {
        throw InvalidInput("encode_appearance expects (N, 3, H, W) images");
    }
    appearance_latent_shape(static_cast<int>(images.size(0)), static_cast<int>(images.size(2)),
                            static_cast<int>(images.size(3)), config_.latent_channels);
    auto h = temporal_pack(encoder_->forward(images));
    h = torch::silu(temporal_mix_->forward(h));
    auto moments = moments_->forward(h).chunk(2, 1);
    return {moments[0], moments[1].clamp(-30.0, 20.0)};
}

torch::Tensor AppearanceCodecImpl::decode(const torch::Tensor& latents) {
    if (latents.dim() != 4 || latents.size(1) != config_.latent_channels) {
        throw InvalidInput("decode_appearance: latent shape does not match the codec");
    }
    auto h = torch::silu(decoder_in_->forward(latents));
    h = decoder_temporal_->forward(h);
    return decoder_->forward(temporal_unpack(h));
}

Posterior encode_appearance(AppearanceCodec& codec, const torch::Tensor& images01) {
    return codec->encode(images01 * 2.0 - 1.0);
}

torch::Tensor decode_appearance(AppearanceCodec& codec, const torch::Tensor& latents) {
    return (codec->decode(latents).clamp(-1.0, 1.0) + 1.0) * 0.5;
}

}  // namespace geolat
