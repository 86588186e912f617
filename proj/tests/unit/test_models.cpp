#include <doctest.h>

#include "geolat/errors.hpp"
#include "geolat/hash.hpp"
#include "geolat/models.hpp"
#include "geolat/pipeline.hpp"
#include "geolat/training.hpp"
#include "support/fixtures.hpp"

using namespace geolat;

namespace {

DiTConfig small_dit() {
    DiTConfig c;
    c.latent_channels = 2;
    c.width = 24;
    c.heads = 2;
    c.blocks = 2;
    c.num_classes = 3;
    c.frames = 5;
    return c;
}

}  // namespace

TEST_CASE("temporal packing groups frames and inverts") {
    const auto x = torch::arange(9 * 2 * 1 * 1, torch::kFloat32).view({9, 2, 1, 1});
    const auto y = temporal_pack(x);
    CHECK(y.sizes() == torch::IntArrayRef({3, 8, 1, 1}));
    for (int j = 0; j < 4; ++j) {
        CHECK(torch::equal(y[0].slice(0, 2 * j, 2 * j + 2), x[0]));
        CHECK(torch::equal(y[1].slice(0, 2 * j, 2 * j + 2), x[1 + j]));
        CHECK(torch::equal(y[2].slice(0, 2 * j, 2 * j + 2), x[5 + j]));
    }
    CHECK(torch::equal(temporal_unpack(y), x));
}

TEST_CASE("causal convolution ignores later latent frames") {
    torch::manual_seed(0);
    CausalConv conv(3, 4);
    torch::NoGradGuard guard;
    auto x = torch::randn({4, 3, 5, 5});
    const auto a = conv->forward(x);
    x[3].add_(1.0);
    x[2].add_(1.0);
    const auto b = conv->forward(x);
    CHECK(torch::equal(a.slice(0, 0, 2), b.slice(0, 0, 2)));
    CHECK_FALSE(torch::equal(a[2], b[2]));
}

TEST_CASE("KL to the prior vanishes at the prior and matches the closed form") {
    LatentPriorStats prior;
    prior.mean = {0.5, -1.0};
    prior.variance = {2.0, 0.25};
    prior.count = 1000;
    const auto mu = prior.mean_tensor(torch::kFloat64).expand({1, 2, 3, 3});
    const auto lv = torch::log(prior.variance_tensor(torch::kFloat64)).expand({1, 2, 3, 3});
    CHECK(kl_to_prior({mu, lv}, prior).item<double>() == doctest::Approx(0.0).epsilon(1e-15));

    // Channel 0: N(1.5, 1) vs N(0.5, 2); channel 1 at its prior.
    auto m = mu.clone();
    auto l = lv.clone();
    m.select(1, 0).fill_(1.5);
    l.select(1, 0).fill_(0.0);
    const double c0 = 0.5 * (std::log(2.0) - 0.0 + (1.0 + 1.0) / 2.0 - 1.0);
    CHECK(kl_to_prior({m, l}, prior).item<double>() == doctest::Approx(c0 / 2.0).epsilon(1e-12));
}

TEST_CASE("prior fit uses population variance and needs enough samples") {
    auto z = torch::zeros({1, 1, 40, 40}, torch::kFloat64);
    z.view({-1}).slice(0, 0, 800).fill_(2.0);
    const LatentPriorStats s = fit_appearance_prior(z);
    CHECK(s.mean[0] == doctest::Approx(1.0));
    CHECK(s.variance[0] == doctest::Approx(1.0));
    CHECK(s.count == 1600);
    CHECK_THROWS_AS(fit_appearance_prior(torch::zeros({1, 1, 10, 10})), InvalidInput);
    const LatentPriorStats flat = fit_appearance_prior(torch::zeros({1, 2, 40, 40}));
    CHECK(flat.floored);
    CHECK(flat.variance[0] == LatentPriorStats::kVarianceFloor);
}

TEST_CASE("adapter rejects a mismatched token layout") {
    AdapterConfig ac;
    SurrogateConfig sc;
    CHECK_NOTHROW(ac.check_compatible(sc));
    sc.channels = 32;
    CHECK_THROWS_AS(ac.check_compatible(sc), ConfigMismatch);
    GeometryAdapter adapter(ac);
    CHECK_THROWS_AS(adapter->encode(torch::zeros({9, 4, 8, 8, 64})), ConfigMismatch);
}

TEST_CASE("flow-matching loss is zero for the exact velocity and respects the weight") {
    const auto z0 = torch::randn({2, 3, 2, 4});
    const auto noise = torch::randn({2, 3, 2, 4});
    const auto cond = torch::zeros({2, 7, 2, 4});
    const VelocityFn exact = [&](const torch::Tensor&, double) { return noise - z0; };
    CHECK(flow_matching_loss(exact, z0, cond, 0.3, noise).item<double>() == doctest::Approx(0.0));

    // A velocity wrong only on the right half costs nothing under the RGB-only weight.
    const VelocityFn half_wrong = [&](const torch::Tensor&, double) {
        auto v = (noise - z0).clone();
        v.slice(3, 2, 4).add_(5.0);
        return v;
    };
    auto w = torch::ones({1, 1, 1, 4});
    w.slice(3, 2, 4).zero_();
    CHECK(flow_matching_loss(half_wrong, z0, cond, 0.6, noise, w).item<double>() == doctest::Approx(0.0));
    CHECK(flow_matching_loss(half_wrong, z0, cond, 0.6, noise).item<double>() == doctest::Approx(12.5));

    // The model input is z_t stacked over the condition.
    const VelocityFn probe = [&](const torch::Tensor& z_in, double t) {
        CHECK(z_in.size(1) == 10);
        CHECK(torch::allclose(z_in.slice(1, 0, 3), (1 - t) * z0 + t * noise));
        return torch::zeros_like(z0);
    };
    flow_matching_loss(probe, z0, cond, 0.25, noise);
}

TEST_CASE("sampler is deterministic and guidance 1 equals the conditional path") {
    torch::manual_seed(1);
    JointDiT dit(small_dit());
    dit->eval();
    torch::NoGradGuard guard;
    for (auto& p : dit->parameters()) p.add_(0.05 * torch::randn_like(p));
    const auto z_cond = torch::randn({2, 6, 2, 4});
    DiffusionConditioning cond;
    cond.descriptor = 2;
    SamplerOptions opts;
    opts.steps = 4;
    opts.seed = 9;
    const auto a = sample_joint(dit, z_cond, cond, opts);
    const auto b = sample_joint(dit, z_cond, cond, opts);
    CHECK(torch::equal(a, b));
    CHECK(a.sizes() == torch::IntArrayRef({2, 2, 2, 4}));
    opts.seed = 10;
    CHECK_FALSE(torch::equal(a, sample_joint(dit, z_cond, cond, opts)));

    const auto noise = torch::randn({2, 2, 2, 4});
    const auto s1 = sample_from_noise(dit, noise, z_cond, cond, 3, 1.0);
    // Hand-rolled Euler with the conditional velocity only.
    auto z = noise.clone();
    for (int k = 0; k < 3; ++k) {
        const double t = 1.0 - k / 3.0;
        const double t_next = 1.0 - (k + 1) / 3.0;
        z = z + (t_next - t) * dit->forward(torch::cat({z, z_cond}, 1), t, cond);
    }
    CHECK(torch::allclose(s1, z, 1e-5, 1e-6));
    const auto s3 = sample_from_noise(dit, noise, z_cond, cond, 3, 3.0);
    CHECK_FALSE(torch::allclose(s1, s3));
}

TEST_CASE("camera and descriptor drops change the frame conditioning") {
    torch::manual_seed(2);
    JointDiT dit(small_dit());
    torch::NoGradGuard guard;
    for (auto& p : dit->parameters()) p.add_(0.05 * torch::randn_like(p));
    DiffusionConditioning with;
    with.descriptor = 1;
    auto q = torch::randn({5, 4});
    with.cameras = torch::cat({q / q.norm(2, 1, true), torch::randn({5, 3}), torch::ones({5, 2})}, 1);
    with.camera_dropped = false;
    DiffusionConditioning no_cam = with;
    no_cam.camera_dropped = true;
    DiffusionConditioning no_desc = with;
    no_desc.descriptor_dropped = true;
    const auto a = dit->frame_conditioning(2, 0.5, with);
    CHECK(a.sizes() == torch::IntArrayRef({2, 24}));
    CHECK_FALSE(torch::allclose(a, dit->frame_conditioning(2, 0.5, no_cam)));
    CHECK_FALSE(torch::allclose(a, dit->frame_conditioning(2, 0.5, no_desc)));
    DiffusionConditioning undefined = no_cam;
    undefined.cameras = torch::Tensor();
    CHECK(torch::allclose(dit->frame_conditioning(2, 0.5, no_cam), dit->frame_conditioning(2, 0.5, undefined)));
}

TEST_CASE("checkpoints round trip parameters and hashes") {
    const auto dir = fixture::scratch_dir("ckpt");
    torch::manual_seed(4);
    JointDiT a(small_dit());
    save_checkpoint(dir / "m.ckpt", *a, a->config().to_json(), Json{{"stage", "test"}});
    torch::manual_seed(5);
    JointDiT b(small_dit());
    CHECK(parameter_hash(*a) != parameter_hash(*b));
    const Json manifest = load_checkpoint(dir / "m.ckpt", *b);
    CHECK(parameter_hash(*a) == parameter_hash(*b));
    CHECK(manifest.at("extra").at("stage") == "test");
    CHECK(read_checkpoint_manifest(dir / "m.ckpt").at("config") == a->config().to_json());

    DiTConfig other = small_dit();
    other.width = 36;
    other.heads = 3;
    JointDiT c(other);
    CHECK_THROWS(load_checkpoint(dir / "m.ckpt", *c));

    freeze(*b);
    for (const auto& p : b->parameters()) CHECK_FALSE(p.requires_grad());
}

TEST_CASE("confidence validity keeps pixels above both the threshold and the quantile") {
    auto conf = torch::linspace(0.0, 1.0, 101).view({1, 101, 1});
    const auto v = confidence_validity(conf, 0.05, 0.5);
    CHECK(v.sum().item<int64_t>() == 51);
    const auto high = torch::linspace(0.9, 1.0, 101).view({1, 101, 1});
    const auto vh = confidence_validity(high, 0.05, 0.5);
    CHECK(vh.sum().item<int64_t>() == 96);
}

TEST_CASE("one-cycle schedule endpoints") {
    CHECK(one_cycle_lr(0, 1000, 1e-3) == doctest::Approx(1e-3 / 25));
    CHECK(one_cycle_lr(50, 1000, 1e-3) == doctest::Approx(1e-3).epsilon(1e-3));
    CHECK(one_cycle_lr(999, 1000, 1e-3) == doctest::Approx(1e-3 / 25e4).epsilon(1e-2));
}

TEST_CASE("loss curves round trip through CSV") {
    const auto dir = fixture::scratch_dir("curve");
    LossCurve c;
    c.columns = {"step", "loss"};
    for (int i = 0; i < 10; ++i) c.rows.push_back({static_cast<double>(i), 10.0 - i});
    c.write_csv(dir / "loss.csv");
    const LossCurve r = LossCurve::read_csv(dir / "loss.csv");
    CHECK(r.columns == c.columns);
    CHECK(r.rows == c.rows);
    CHECK(r.head_mean("loss", 2) == doctest::Approx(9.5));
    CHECK(r.tail_mean("loss", 2) == doctest::Approx(1.5));
}
