#include "geolat/training.hpp"

#include "geolat/conditioning.hpp"
#include "geolat/errors.hpp"
#include "geolat/rng.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace geolat {

namespace {

torch::Tensor from_floats(const std::vector<float>& v, c10::IntArrayRef shape) {
    return torch::from_blob(const_cast<float*>(v.data()), shape, torch::kFloat32).clone();
}

torch::Tensor from_bytes(const std::vector<std::uint8_t>& v, c10::IntArrayRef shape) {
    return torch::from_blob(const_cast<std::uint8_t*>(v.data()), shape, torch::kUInt8).to(torch::kFloat32);
}

void set_lr(torch::optim::Adam& opt, double lr) {
    for (auto& group : opt.param_groups()) {
        static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
    }
}

void check_finite(const torch::Tensor& loss, const std::string& stage, int step) {
    if (!std::isfinite(loss.item<double>())) {
        std::ostringstream msg;
        msg << stage << ": loss is not finite at step " << step;
        throw Divergence(msg.str());
    }
}

void optimizer_step(torch::optim::Adam& opt, torch::nn::Module& module, const torch::Tensor& loss) {
    opt.zero_grad();
    loss.backward();
    torch::nn::utils::clip_grad_norm_(module.parameters(), 1.0);
    opt.step();
}

std::vector<torch::Tensor> trainable(torch::nn::Module& module) {
    std::vector<torch::Tensor> out;
    for (auto& p : module.parameters()) {
        if (p.requires_grad()) {
            out.push_back(p);
        }
    }
    return out;
}

void require_scenes(const std::vector<SceneTensors>& scenes, const char* stage) {
    if (scenes.empty()) {
        throw InvalidInput(std::string(stage) + ": no training scenes");
    }
}

torch::Tensor masked_mean(const torch::Tensor& err, const torch::Tensor& mask) {
    return (err * mask).sum() / mask.sum().clamp_min(1.0);
}

}  // namespace

SceneTensors to_tensors(const RenderedSequence& seq, const std::string& id) {
    const int64_t n = seq.frames, h = seq.height, w = seq.width;
    SceneTensors s;
    s.id = id;
    s.images = from_floats(seq.images, {n, h, w, 3}).permute({0, 3, 1, 2}).contiguous();
    s.depth = from_floats(seq.depths, {n, h, w});
    s.validity = from_bytes(seq.validity, {n, h, w});
    s.points = from_floats(seq.pointmaps, {n, h, w, 3});
    std::vector<float> cams;
    for (const auto& c : seq.cameras) {
        for (double v : c.to_vector()) {
            cams.push_back(static_cast<float>(v));
        }
    }
    s.cameras = from_floats(cams, {n, CameraPose::kVectorSize});
    s.descriptor = seq.descriptor_class;
    return s;
}

// ---------------------------------------------------------------- loss curves

void LossCurve::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) {
        throw InvalidInput("cannot write " + path.string());
    }
    for (size_t i = 0; i < columns.size(); ++i) {
        out << (i ? "," : "") << columns[i];
    }
    out << "\n";
    out.precision(9);
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            out << (i ? "," : "") << row[i];
        }
        out << "\n";
    }
}

LossCurve LossCurve::read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw InvalidInput("cannot read " + path.string());
    }
    LossCurve curve;
    std::string line;
    if (std::getline(in, line)) {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            curve.columns.push_back(cell);
        }
    }
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> row;
        while (std::getline(ss, cell, ',')) {
            row.push_back(std::stod(cell));
        }
        curve.rows.push_back(std::move(row));
    }
    return curve;
}

namespace {
double window_mean(const LossCurve& curve, const std::string& column, size_t window, bool head) {
    const auto it = std::find(curve.columns.begin(), curve.columns.end(), column);
    if (it == curve.columns.end()) {
        throw InvalidInput("loss curve has no column " + column);
    }
    if (curve.rows.empty()) {
        throw InvalidInput("loss curve is empty");
    }
    const size_t col = static_cast<size_t>(it - curve.columns.begin());
    const size_t n = std::min(window, curve.rows.size());
    double sum = 0.0;
    for (size_t k = 0; k < n; ++k) {
        const size_t r = head ? k : curve.rows.size() - n + k;
        sum += curve.rows[r][col];
    }
    return sum / static_cast<double>(n);
}
}  // namespace

double LossCurve::head_mean(const std::string& column, size_t window) const {
    return window_mean(*this, column, window, true);
}

double LossCurve::tail_mean(const std::string& column, size_t window) const {
    return window_mean(*this, column, window, false);
}

double one_cycle_lr(int step, int total, double max_lr, double warmup) {
    const double initial = max_lr / 25.0;
    const double final_lr = initial / 1e4;
    const double warm_end = std::max(warmup * total - 1.0, 0.0);
    const double last = std::max(total - 1.0, warm_end + 1.0);
    auto anneal = [](double start, double end, double pct) {
        return end + (start - end) / 2.0 * (std::cos(std::numbers::pi * pct) + 1.0);
    };
    if (step <= warm_end) {
        return warm_end > 0.0 ? anneal(initial, max_lr, step / warm_end) : max_lr;
    }
    return anneal(max_lr, final_lr, std::min((step - warm_end) / (last - warm_end), 1.0));
}

// ---------------------------------------------------------------- codec

Trained<AppearanceCodec> train_codec(const std::vector<SceneTensors>& scenes, const CodecTrainOptions& opts) {
    require_scenes(scenes, "codec");
    torch::manual_seed(opts.seed);
    Trained<AppearanceCodec> out;
    out.model = AppearanceCodec(opts.model);
    auto& codec = out.model;
    codec->train();
    auto gen = at::make_generator<at::CPUGeneratorImpl>(mix_seed(opts.seed, 1));
    torch::optim::Adam opt(codec->parameters(), torch::optim::AdamOptions(opts.lr));
    out.curve.columns = {"step", "lr", "loss", "recon_mse", "kl_sum"};
    for (int step = 0; step < opts.steps; ++step) {
        const double lr = one_cycle_lr(step, opts.steps, opts.lr);
        set_lr(opt, lr);
        const auto& x = scenes[static_cast<size_t>(step) % scenes.size()].images * 2.0 - 1.0;
        const auto post = codec->encode(x);
        const auto recon = codec->decode(post.sample(gen));
        const auto mse = (recon - x).square().mean();
        const auto kl = 0.5 * (post.mean.square() + post.logvar.exp() - 1.0 - post.logvar).sum();
        const auto loss = mse + opts.beta * kl;
        check_finite(loss, "codec", step);
        optimizer_step(opt, *codec, loss);
        out.curve.rows.push_back({double(step), lr, loss.item<double>(), mse.item<double>(), kl.item<double>()});
    }
    codec->eval();
    torch::NoGradGuard guard;
    double sum = 0.0, worst = 1e9;
    for (const auto& s : scenes) {
        const auto rec = decode_appearance(codec, encode_appearance(codec, s.images).mean);
        const double mse = (rec - s.images).square().mean().item<double>();
        const double p = 10.0 * std::log10(1.0 / std::max(mse, 1e-12));
        sum += p;
        worst = std::min(worst, p);
    }
    out.metrics = {{"train_psnr_mean", sum / scenes.size()}, {"train_psnr_min", worst},
                   {"loss_head", out.curve.head_mean("loss", 50)}, {"loss_tail", out.curve.tail_mean("loss", 50)}};
    return out;
}

torch::Tensor appearance_means(AppearanceCodec& codec, const std::vector<SceneTensors>& scenes) {
    torch::NoGradGuard guard;
    std::vector<torch::Tensor> parts;
    for (const auto& s : scenes) {
        parts.push_back(encode_appearance(codec, s.images).mean);
    }
    return torch::cat(parts, 0);
}

// ---------------------------------------------------------------- surrogate

namespace {
struct SurrogateLoss {
    torch::Tensor depth, points, camera, validity, total;
};

SurrogateLoss surrogate_loss(const GeometryOutputs& out, const SceneTensors& s, double validity_weight) {
    SurrogateLoss l;
    l.depth = masked_mean((out.depth - s.depth).square(), s.validity);
    l.points = masked_mean((out.points - s.points).square().mean(-1), s.validity);
    l.camera = (out.cameras - s.cameras).abs().mean();
    l.validity = torch::binary_cross_entropy_with_logits(out.validity_logit, s.validity);
    l.total = l.depth + l.points + l.camera + validity_weight * l.validity;
    return l;
}
}  // namespace

Trained<ReconSurrogate> pretrain_surrogate(const std::vector<SceneTensors>& scenes, const SurrogateTrainOptions& opts) {
    require_scenes(scenes, "surrogate");
    opts.model.validate();
    torch::manual_seed(opts.seed);
    Trained<ReconSurrogate> out;
    out.model = ReconSurrogate(opts.model);
    auto& model = out.model;
    model->train();
    torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(opts.lr));
    out.curve.columns = {"step", "lr", "loss", "depth_mse", "point_mse", "camera_l1", "validity_bce"};
    for (int step = 0; step < opts.steps; ++step) {
        const double lr = one_cycle_lr(step, opts.steps, opts.lr);
        set_lr(opt, lr);
        const auto& s = scenes[static_cast<size_t>(step) % scenes.size()];
        const auto l = surrogate_loss(model->decode_tokens(model->encode_views(s.images)), s, opts.validity_weight);
        check_finite(l.total, "surrogate", step);
        optimizer_step(opt, *model, l.total);
        out.curve.rows.push_back({double(step), lr, l.total.item<double>(), l.depth.item<double>(),
                                  l.points.item<double>(), l.camera.item<double>(), l.validity.item<double>()});
    }
    model->eval();
    out.metrics = {{"loss_head", out.curve.head_mean("loss", 50)}, {"loss_tail", out.curve.tail_mean("loss", 50)}};
    return out;
}

SurrogateDiagnostics surrogate_diagnostics(ReconSurrogate& surrogate, const std::vector<SceneTensors>& scenes) {
    require_scenes(scenes, "surrogate diagnostics");
    torch::NoGradGuard guard;
    SurrogateDiagnostics d;
    for (const auto& s : scenes) {
        const auto out = surrogate->decode_tokens(surrogate->encode_views(s.images));
        const auto& m = s.validity;
        const double mae = masked_mean((out.depth - s.depth).abs(), m).item<double>();
        const double scale = masked_mean(s.depth, m).item<double>();
        d.depth_mae += mae;
        d.relative_depth_mae += mae / scale;
        d.max_relative_depth_mae = std::max(d.max_relative_depth_mae, mae / scale);

        const auto cams = cameras_from_tensor(out.cameras);
        const auto first = cams.front();
        const double rot = first.rotation.angularDistance(Eigen::Quaterniond::Identity());
        d.first_camera_rotation_deg = std::max(d.first_camera_rotation_deg, rot * 180.0 / std::numbers::pi);
        d.first_camera_translation = std::max(d.first_camera_translation, first.translation.norm());

        // Unprojection of predicted depth through predicted cameras vs predicted pointmaps.
        double gap = 0.0;
        size_t count = 0;
        const int h = static_cast<int>(s.depth.size(1)), w = static_cast<int>(s.depth.size(2));
        for (int i = 0; i < static_cast<int>(cams.size()); ++i) {
            const auto dm = depth_from_tensor(out.depth[i], m[i]);
            const auto cloud = unproject_depth(dm, cams[i], {h, w});
            const auto pts = out.points[i].contiguous();
            const auto acc = pts.accessor<float, 3>();
            size_t k = 0;
            for (int v = 0; v < h; ++v) {
                for (int u = 0; u < w; ++u) {
                    if (!dm.is_valid(v, u)) {
                        continue;
                    }
                    const Eigen::Vector3d p(acc[v][u][0], acc[v][u][1], acc[v][u][2]);
                    gap += (cloud.points[k++] - p).norm();
                    ++count;
                }
            }
        }
        d.unprojection_gap += gap / std::max<size_t>(count, 1);
    }
    const double n = static_cast<double>(scenes.size());
    d.depth_mae /= n;
    d.relative_depth_mae /= n;
    d.unprojection_gap /= n;
    return d;
}

Json SurrogateDiagnostics::to_json() const {
    return {{"depth_mae", depth_mae},
            {"relative_depth_mae", relative_depth_mae},
            {"max_relative_depth_mae", max_relative_depth_mae},
            {"first_camera_rotation_deg", first_camera_rotation_deg},
            {"first_camera_translation", first_camera_translation},
            {"unprojection_gap", unprojection_gap}};
}

// ---------------------------------------------------------------- adapter

Trained<GeometryAdapter> train_adapter(ReconSurrogate& surrogate, const LatentPriorStats& prior,
                                       const std::vector<SceneTensors>& scenes, const AdapterTrainOptions& opts) {
    require_scenes(scenes, "adapter");
    opts.model.check_compatible(surrogate->config());
    surrogate->eval();
    std::vector<torch::Tensor> tokens;
    std::vector<GeometryOutputs> refs;
    {
        torch::NoGradGuard guard;
        for (const auto& s : scenes) {
            tokens.push_back(surrogate->encode_views(s.images));
            refs.push_back(surrogate->decode_tokens(tokens.back()));
        }
    }
    torch::manual_seed(opts.seed);
    Trained<GeometryAdapter> out;
    out.model = GeometryAdapter(opts.model);
    auto& adapter = out.model;
    adapter->train();
    auto gen = at::make_generator<at::CPUGeneratorImpl>(mix_seed(opts.seed, 1));
    torch::optim::Adam opt(trainable(*adapter), torch::optim::AdamOptions(opts.lr));
    out.curve.columns = {"step", "lr", "total", "token_mse", "camera_l1", "depth_mse", "point_mse", "kl"};
    for (int step = 0; step < opts.steps; ++step) {
        const double lr = one_cycle_lr(step, opts.steps, opts.lr);
        set_lr(opt, lr);
        const size_t i = static_cast<size_t>(step) % scenes.size();
        const auto post = adapter->encode(tokens[i]);
        const auto tokens_hat = adapter->decode(post.sample(gen));
        const auto decoded = surrogate->decode_tokens(tokens_hat);
        const auto terms = adapter_loss(tokens[i], tokens_hat, decoded, refs[i], scenes[i].validity, post, prior,
                                        opts.lambda1, opts.lambda2);
        optimizer_step(opt, *adapter, terms.total);
        const auto r = terms.report();
        out.curve.rows.push_back(
            {double(step), lr, r.total, r.token_mse, r.camera_l1, r.depth_mse, r.point_mse, r.kl});
    }
    adapter->eval();
    std::vector<Posterior> posts;
    double rel = 0.0;
    {
        torch::NoGradGuard guard;
        for (const auto& v : tokens) {
            posts.push_back(adapter->encode(v));
            rel += relative_token_error(adapter, v);
        }
    }
    out.metrics = {{"relative_token_error", rel / tokens.size()},
                   {"latent_gates", latent_gates(posts, prior).to_json()},
                   {"loss_head", out.curve.head_mean("total", 50)},
                   {"loss_tail", out.curve.tail_mean("total", 50)}};
    return out;
}

double relative_token_error(GeometryAdapter& adapter, const torch::Tensor& tokens) {
    torch::NoGradGuard guard;
    const auto rec = adapter->decode(adapter->encode(tokens).mean);
    const double num = (rec - tokens).square().sum().item<double>();
    const double den = (tokens - tokens.mean()).square().sum().item<double>();
    return num / std::max(den, 1e-30);
}

LatentGateReport latent_gates(const std::vector<Posterior>& posteriors, const LatentPriorStats& prior) {
    if (posteriors.empty()) {
        throw InvalidInput("latent gates need at least one posterior");
    }
    std::vector<torch::Tensor> means, vars;
    for (const auto& p : posteriors) {
        means.push_back(p.mean.to(torch::kFloat64));
        vars.push_back(p.logvar.to(torch::kFloat64).exp());
    }
    const auto m = torch::cat(means, 0);
    const auto s2 = torch::cat(vars, 0);
    const std::vector<int64_t> dims = {0, 2, 3};
    const auto channel_mean = m.mean(dims);
    const auto channel_var = (m - channel_mean.view({1, -1, 1, 1})).square().mean(dims);
    const auto expected_s2 = s2.mean(dims);
    const int64_t c = m.size(1);
    if (static_cast<size_t>(c) != prior.mean.size()) {
        throw ConfigMismatch("latent channel count differs from the prior");
    }
    LatentGateReport r;
    r.passes = true;
    for (int64_t k = 0; k < c; ++k) {
        const double sigma = std::sqrt(prior.variance[k]);
        const double dev = (channel_mean[k].item<double>() - prior.mean[k]) / sigma;
        const double mv = channel_var[k].item<double>() / prior.variance[k];
        const double agg = (channel_var[k].item<double>() + expected_s2[k].item<double>()) / prior.variance[k];
        r.mean_deviation_sigma.push_back(dev);
        r.mean_variance_ratio.push_back(mv);
        r.variance_ratio.push_back(agg);
        r.max_abs_deviation = std::max(r.max_abs_deviation, std::abs(dev));
        if (std::abs(dev) > r.mean_tolerance || agg < r.ratio_low || agg > r.ratio_high) {
            r.passes = false;
        }
    }
    return r;
}

Json LatentGateReport::to_json() const {
    return {{"mean_deviation_sigma", mean_deviation_sigma},
            {"variance_ratio", variance_ratio},
            {"mean_variance_ratio", mean_variance_ratio},
            {"mean_tolerance", mean_tolerance},
            {"ratio_range", {ratio_low, ratio_high}},
            {"max_abs_deviation", max_abs_deviation},
            {"passes", passes}};
}

// ---------------------------------------------------------------- diffusion

DiffusionTargets diffusion_targets(AppearanceCodec& codec, ReconSurrogate* surrogate, GeometryAdapter* adapter,
                                   const LatentPriorStats& prior, const SceneTensors& scene, bool sample_latents,
                                   std::optional<at::Generator> gen) {
    torch::NoGradGuard guard;
    DiffusionTargets t;
    const auto pa = encode_appearance(codec, scene.images);
    t.appearance = normalize_latent(sample_latents ? pa.sample(gen) : pa.mean, prior);
    if (adapter != nullptr) {
        if (surrogate == nullptr) {
            throw MissingPrerequisite("geometry targets need the reconstruction surrogate");
        }
        const auto pg = (*adapter)->encode((*surrogate)->encode_views(scene.images));
        t.geometry = normalize_latent(sample_latents ? pg.sample(gen) : pg.mean, prior);
    } else {
        t.geometry = torch::zeros_like(t.appearance);
    }
    return t;
}

Trained<JointDiT> train_diffusion(AppearanceCodec& codec, ReconSurrogate* surrogate, GeometryAdapter* adapter,
                                  const LatentPriorStats& prior, const std::vector<SceneTensors>& scenes,
                                  const DiffusionTrainOptions& opts) {
    require_scenes(scenes, "diffusion");
    opts.model.validate();
    if (!opts.rgb_only && adapter == nullptr) {
        throw MissingPrerequisite("joint diffusion needs a geometry adapter");
    }
    GeometryAdapter* geometry = opts.rgb_only ? nullptr : adapter;
    auto latent_gen = at::make_generator<at::CPUGeneratorImpl>(mix_seed(opts.seed, 2));

    std::vector<torch::Tensor> targets;
    std::vector<std::array<torch::Tensor, kConditionModeCount>> conditions;
    for (const auto& s : scenes) {
        if (s.descriptor < 0 || s.descriptor >= opts.model.num_classes) {
            throw InvalidInput("scene descriptor outside the model's class range");
        }
        if (!opts.sample_latents) {
            const auto t = diffusion_targets(codec, surrogate, geometry, prior, s, false, std::nullopt);
            targets.push_back(make_joint_latent(t.appearance, t.geometry));
        }
        std::array<torch::Tensor, kConditionModeCount> per_mode;
        const int frames = static_cast<int>(s.images.size(0));
        for (int m = 0; m < kConditionModeCount; ++m) {
            const auto bits = provided_frames(static_cast<ConditionMode>(m), frames);
            const auto mask = torch::tensor(std::vector<float>(bits.begin(), bits.end()));
            per_mode[m] = build_condition(codec, prior, s.images, mask);
        }
        conditions.push_back(per_mode);
    }

    torch::manual_seed(opts.seed);
    Trained<JointDiT> out;
    out.model = JointDiT(opts.model);
    auto& model = out.model;
    model->train();
    Rng rng(mix_seed(opts.seed, 3));
    auto noise_gen = at::make_generator<at::CPUGeneratorImpl>(mix_seed(opts.seed, 4));
    const ConditionDropRates rates{opts.model.descriptor_drop, opts.model.camera_drop};
    torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(opts.lr));
    out.curve.columns = {"step", "lr", "loss", "t", "mode"};

    torch::Tensor weight;
    for (int step = 0; step < opts.steps; ++step) {
        const double lr = one_cycle_lr(step, opts.steps, opts.lr);
        set_lr(opt, lr);
        const size_t i = static_cast<size_t>(step) % scenes.size();
        const auto draw = sample_training_condition(rng, rates);
        const double t = rng.uniform();
        torch::Tensor z0;
        if (opts.sample_latents) {
            const auto tg = diffusion_targets(codec, surrogate, geometry, prior, scenes[i], true, latent_gen);
            z0 = make_joint_latent(tg.appearance, tg.geometry);
        } else {
            z0 = targets[i];
        }
        if (opts.rgb_only && !weight.defined()) {
            weight = torch::ones({1, 1, 1, z0.size(3)});
            weight.slice(3, z0.size(3) / 2).zero_();
        }
        const auto noise = at::randn(z0.sizes(), noise_gen, z0.options());
        DiffusionConditioning cond;
        cond.descriptor = scenes[i].descriptor;
        cond.descriptor_dropped = draw.descriptor_dropped;
        cond.cameras = scenes[i].cameras;
        cond.camera_dropped = draw.camera_dropped;
        const VelocityFn velocity = [&](const torch::Tensor& z_in, double tt) { return model->forward(z_in, tt, cond); };
        const auto loss = flow_matching_loss(velocity, z0, conditions[i][static_cast<int>(draw.mode)], t, noise,
                                             opts.rgb_only ? weight : torch::Tensor());
        check_finite(loss, "diffusion", step);
        optimizer_step(opt, *model, loss);
        out.curve.rows.push_back({double(step), lr, loss.item<double>(), t, double(static_cast<int>(draw.mode))});
    }
    model->eval();
    out.metrics = {{"loss_head", out.curve.head_mean("loss", 200)}, {"loss_tail", out.curve.tail_mean("loss", 200)},
                   {"rgb_only", opts.rgb_only}};
    return out;
}

// ---------------------------------------------------------------- conversions

std::vector<CameraPose> cameras_from_tensor(const torch::Tensor& cameras) {
    if (cameras.dim() != 2 || cameras.size(1) != CameraPose::kVectorSize) {
        throw InvalidInput("camera tensor must be (N, 9)");
    }
    const auto c = cameras.detach().to(torch::kFloat64).contiguous();
    std::vector<CameraPose> out;
    for (int64_t i = 0; i < c.size(0); ++i) {
        out.push_back(CameraPose::from_vector(std::span<const double>(c[i].data_ptr<double>(), CameraPose::kVectorSize)));
    }
    return out;
}

torch::Tensor cameras_to_tensor(std::span<const CameraPose> cameras) {
    auto out = torch::empty({static_cast<int64_t>(cameras.size()), CameraPose::kVectorSize});
    for (size_t i = 0; i < cameras.size(); ++i) {
        const auto v = cameras[i].to_vector();
        for (int k = 0; k < CameraPose::kVectorSize; ++k) {
            out[static_cast<int64_t>(i)][k] = static_cast<float>(v[k]);
        }
    }
    return out;
}

DepthMap depth_from_tensor(const torch::Tensor& depth, const torch::Tensor& valid) {
    const auto d = depth.detach().to(torch::kFloat64).contiguous();
    const auto m = valid.detach().to(torch::kFloat64).contiguous();
    DepthMap out(static_cast<int>(d.size(0)), static_cast<int>(d.size(1)));
    const double* dp = d.data_ptr<double>();
    const double* mp = m.data_ptr<double>();
    for (size_t k = 0; k < out.values.size(); ++k) {
        out.values[k] = dp[k];
        out.valid[k] = mp[k] > 0.5 ? 1 : 0;
    }
    return out;
}

}  // namespace geolat
