#include "geolat/errors.hpp"
#include "geolat/models.hpp"

#include <cmath>

namespace geolat {

namespace F = torch::nn::functional;

// ---------------------------------------------------------------- prior

torch::Tensor LatentPriorStats::mean_tensor(torch::ScalarType dtype) const {
    return torch::tensor(mean, torch::kFloat64).to(dtype).view({1, -1, 1, 1});
}

torch::Tensor LatentPriorStats::variance_tensor(torch::ScalarType dtype) const {
    return torch::tensor(variance, torch::kFloat64).to(dtype).view({1, -1, 1, 1});
}

Json LatentPriorStats::to_json() const {
    return Json{{"mean", mean}, {"variance", variance}, {"count", count}, {"floored", floored}};
}

LatentPriorStats LatentPriorStats::from_json(const Json& j) {
    LatentPriorStats s;
    s.mean = j.at("mean").get<std::vector<double>>();
    s.variance = j.at("variance").get<std::vector<double>>();
    s.count = j.at("count").get<std::int64_t>();
    s.floored = j.value("floored", false);
    if (s.mean.size() != s.variance.size() || s.mean.empty()) {
        throw InvalidInput("prior statistics are malformed");
    }
    return s;
}

LatentPriorStats fit_appearance_prior(const torch::Tensor& latents) {
    if (latents.dim() != 4) {
        throw InvalidInput("fit_appearance_prior expects (B, c, h, w) latents");
    }
    const auto x = latents.detach().to(torch::kFloat64).transpose(0, 1).reshape({latents.size(1), -1});
    LatentPriorStats s;
    s.count = x.size(1);
    if (s.count < LatentPriorStats::kMinSamples) {
        throw InvalidInput("fit_appearance_prior needs at least 1000 latent pixels per channel, got " +
                           std::to_string(s.count));
    }
    const auto mean = x.mean(1);
    const auto var = (x - mean.unsqueeze(1)).square().mean(1);
    for (int64_t k = 0; k < x.size(0); ++k) {
        s.mean.push_back(mean[k].item<double>());
        double v = var[k].item<double>();
        if (!(v >= LatentPriorStats::kVarianceFloor)) {
            v = LatentPriorStats::kVarianceFloor;
            s.floored = true;
        }
        s.variance.push_back(v);
    }
    return s;
}

torch::Tensor kl_to_prior(const Posterior& posterior, const LatentPriorStats& prior) {
    const auto dtype = posterior.mean.scalar_type();
    if (posterior.mean.size(1) != static_cast<int64_t>(prior.mean.size())) {
        throw ConfigMismatch("posterior channel count differs from the prior");
    }
    const auto mu = prior.mean_tensor(dtype);
    const auto var = prior.variance_tensor(dtype);
    const auto& lv = posterior.logvar;
    const auto kl = 0.5 * (torch::log(var) - lv + (torch::exp(lv) + (posterior.mean - mu).square()) / var - 1.0);
    return kl.mean();
}

// ---------------------------------------------------------------- adapter

Json AdapterConfig::to_json() const {
    return Json{{"levels", levels},           {"token_channels", token_channels}, {"token_grid", token_grid},
                {"latent_channels", latent_channels}, {"latent_grid", latent_grid}, {"hidden", hidden},
                {"frame_channels", frame_channels},   {"logvar_init", logvar_init}};
}

AdapterConfig AdapterConfig::from_json(const Json& j) {
    AdapterConfig c;
    c.levels = j.value("levels", c.levels);
    c.token_channels = j.value("token_channels", c.token_channels);
    c.token_grid = j.value("token_grid", c.token_grid);
    c.latent_channels = j.value("latent_channels", c.latent_channels);
    c.latent_grid = j.value("latent_grid", c.latent_grid);
    c.hidden = j.value("hidden", c.hidden);
    c.frame_channels = j.value("frame_channels", c.frame_channels);
    c.logvar_init = j.value("logvar_init", c.logvar_init);
    return c;
}

void AdapterConfig::check_compatible(const SurrogateConfig& surrogate) const {
    if (levels != surrogate.levels() || token_channels != surrogate.channels || token_grid != surrogate.grid()) {
        throw ConfigMismatch("adapter token layout does not match the reconstruction surrogate");
    }
}

namespace {

torch::nn::Conv2d conv3(int in, int out) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1));
}

torch::Tensor resample(const torch::Tensor& x, int size) {
    if (x.size(2) == size && x.size(3) == size) {
        return x;
    }
    // Nearest-exact: output pixel i reads input floor((i + 0.5) * in / out).
    auto index = [size](int64_t in) {
        const auto i = torch::arange(size, torch::kFloat64);
        return ((i + 0.5) * (static_cast<double>(in) / size)).floor().clamp_max(in - 1).to(torch::kInt64);
    };
    return x.index_select(2, index(x.size(2))).index_select(3, index(x.size(3)));
}

}  // namespace

GeometryAdapterImpl::GeometryAdapterImpl(const AdapterConfig& config) : config_(config) {
    const int lc = config.input_channels();
    const int hid = config.hidden;
    const int fc = config.frame_channels;
    const int c = config.latent_channels;
    enc_in_ = register_module("enc_in", conv3(lc, hid));
    enc_frame_ = register_module("enc_frame", conv3(hid, fc));
    enc_temporal_ = register_module("enc_temporal", CausalConv(kTemporalStride * fc, hid));
    enc_moments_ = register_module("enc_moments", conv3(hid, 2 * c));
    dec_in_ = register_module("dec_in", conv3(c, hid));
    dec_temporal_ = register_module("dec_temporal", CausalConv(hid, kTemporalStride * fc));
    dec_frame_ = register_module("dec_frame", conv3(fc, hid));
    dec_out_ = register_module("dec_out", conv3(hid, lc));
    torch::NoGradGuard guard;
    enc_moments_->bias.slice(0, c, 2 * c).fill_(config.logvar_init);
}

Posterior GeometryAdapterImpl::encode(const torch::Tensor& tokens) {
    const auto& c = config_;
    if (tokens.dim() != 5 || tokens.size(1) != c.levels || tokens.size(2) != c.token_grid ||
        tokens.size(3) != c.token_grid || tokens.size(4) != c.token_channels) {
        throw ConfigMismatch("encode_geometry: token shape does not match the adapter configuration");
    }
    latent_frame_count(static_cast<int>(tokens.size(0)));
    const int64_t n = tokens.size(0);
    auto x = tokens.permute({0, 1, 4, 2, 3}).reshape({n, c.input_channels(), c.token_grid, c.token_grid});
    x = resample(x, c.latent_grid);
    x = torch::silu(enc_in_->forward(x));
    x = enc_frame_->forward(x);
    x = torch::silu(enc_temporal_->forward(temporal_pack(x)));
    auto moments = enc_moments_->forward(x).chunk(2, 1);
    return {moments[0], moments[1].clamp(-30.0, 20.0)};
}

torch::Tensor GeometryAdapterImpl::decode(const torch::Tensor& latents) {
    const auto& c = config_;
    if (latents.dim() != 4 || latents.size(1) != c.latent_channels || latents.size(2) != c.latent_grid ||
        latents.size(3) != c.latent_grid) {
        throw InvalidInput("decode_geometry: latent shape does not match the adapter configuration");
    }
    auto x = torch::silu(dec_in_->forward(latents));
    x = temporal_unpack(dec_temporal_->forward(x));
    x = torch::silu(dec_frame_->forward(torch::silu(x)));
    x = resample(dec_out_->forward(x), c.token_grid);
    const int64_t frames = x.size(0);
    return x.reshape({frames, c.levels, c.token_channels, c.token_grid, c.token_grid}).permute({0, 1, 3, 4, 2});
}

AdapterLossReport AdapterLossTerms::report() const {
    AdapterLossReport r;
    r.token_mse = token_mse.item<double>();
    r.camera_l1 = camera_l1.item<double>();
    r.depth_mse = depth_mse.item<double>();
    r.point_mse = point_mse.item<double>();
    r.kl = kl.item<double>();
    r.lambda1 = lambda1;
    r.lambda2 = lambda2;
    r.total = lambda1 * (r.token_mse + r.camera_l1 + r.depth_mse + r.point_mse) + lambda2 * r.kl;
    return r;
}

AdapterLossTerms adapter_loss(const torch::Tensor& tokens, const torch::Tensor& tokens_hat,
                              const GeometryOutputs& decoded, const GeometryOutputs& reference,
                              const torch::Tensor& validity, const Posterior& posterior,
                              const LatentPriorStats& prior, double lambda1, double lambda2) {
    if (tokens.sizes() != tokens_hat.sizes()) {
        throw InvalidInput("adapter_loss: reconstructed tokens differ in shape");
    }
    AdapterLossTerms t;
    t.lambda1 = lambda1;
    t.lambda2 = lambda2;
    t.token_mse = (tokens_hat - tokens).square().mean();
    t.camera_l1 = (decoded.cameras - reference.cameras).abs().mean();
    const auto depth_err = (decoded.depth - reference.depth).square();
    const auto point_err = (decoded.points - reference.points).square().mean(-1);
    if (validity.defined()) {
        const auto m = validity.to(depth_err.scalar_type());
        const auto denom = m.sum().clamp_min(1.0);
        t.depth_mse = (depth_err * m).sum() / denom;
        t.point_mse = (point_err * m).sum() / denom;
    } else {
        t.depth_mse = depth_err.mean();
        t.point_mse = point_err.mean();
    }
    t.kl = kl_to_prior(posterior, prior);
    t.total = lambda1 * (t.token_mse + t.camera_l1 + t.depth_mse + t.point_mse) + lambda2 * t.kl;
    for (const auto* term : {&t.token_mse, &t.camera_l1, &t.depth_mse, &t.point_mse, &t.kl}) {
        if (!torch::isfinite(*term).item<bool>()) {
            throw Divergence("adapter loss term is not finite");
        }
    }
    return t;
}

}  // namespace geolat
