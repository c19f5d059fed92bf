#include <gtest/gtest.h>

#include <cmath>

#include "partaff/error.hpp"
#include "partaff/guidance.hpp"
#include "partaff/scene.hpp"
#include "partaff/schedule.hpp"
#include "partaff/sds.hpp"

using namespace partaff;

namespace {

// Replays the SDS noise stream so that its prediction equals the drawn
// epsilon exactly.
class EchoGuidance final : public GuidanceModel {
public:
    explicit EchoGuidance(Rng noise) : noise_(noise) {}
    Tensor predict_noise(const GuidanceInput& in, const AttentionModulation*, AttentionTrace*) const override {
        std::vector<double> eps(in.x_t.size());
        for (auto& e : eps) e = noise_.normal();
        return Tensor(in.x_t.shape(), std::move(eps));
    }

private:
    mutable Rng noise_;
};

class NanGuidance final : public GuidanceModel {
public:
    Tensor predict_noise(const GuidanceInput& in, const AttentionModulation*, AttentionTrace*) const override {
        return Tensor::scratch(in.x_t.shape(), std::vector<double>(in.x_t.size(), NAN));
    }
};

SdsConfig tiny_config(std::size_t res = 4, std::size_t samples = 8) {
    SdsConfig c;
    c.render.resolution = res;
    c.render.samples_per_ray = samples;
    return c;
}

bool same_weights(const AssetField& a, const AssetField& b) {
    for (std::size_t k = 0; k < a.mlp.weights.size(); ++k) {
        if (!a.mlp.weights[k].bit_equal(b.mlp.weights[k])) return false;
    }
    return true;
}

ToyAttentionGuidance toy_guidance(const PromptSpec& prompt) {
    ToyAttentionConfig tc;
    tc.tokens = prompt.tokens;
    tc.parts = prompt.parts;
    tc.part_colors = {Rgb{0.9, 0.15, 0.1}, Rgb{0.1, 0.2, 0.9}};
    tc.seed = 5;
    return ToyAttentionGuidance(tc);
}

}  // namespace

TEST(Schedule, LinearBetaEndpoints) {
    const auto s = NoiseSchedule::linear();
    EXPECT_EQ(s.max_t, 1000u);
    EXPECT_EQ(s.alpha(0), 1.0);
    EXPECT_NEAR(s.alpha(1), 1.0 - 0.00085, 1e-15);
    EXPECT_NEAR(s.alpha(2), (1.0 - 0.00085) * (1.0 - (0.00085 + (0.012 - 0.00085) / 999.0)), 1e-15);
    for (std::uint32_t t = 1; t <= 1000; ++t) EXPECT_LE(s.alpha(t), s.alpha(t - 1));
    EXPECT_GT(s.alpha(1000), 0.0);
    EXPECT_THROW(s.alpha(1001), ValidationError);
    EXPECT_EQ(s.w(500), 1.0);
    auto s2 = s;
    s2.weight = TimestepWeight::OneMinusAlphaBar;
    EXPECT_EQ(s2.w(500), 1.0 - s.alpha(500));
}

TEST(Schedule, RejectsInvalidAlphaBar) {
    NoiseSchedule s;
    s.max_t = 2;
    s.alpha_bar = {1.0, 0.5, 0.6};
    EXPECT_THROW(s.validate(), ValidationError);
    s.alpha_bar = {1.0, 0.5, 0.0};
    EXPECT_THROW(s.validate(), ValidationError);
    s.alpha_bar = {0.9, 0.5, 0.4};
    EXPECT_THROW(s.validate(), ValidationError);
}

TEST(AddNoise, Endpoints) {
    const auto s = NoiseSchedule::linear();
    const Tensor x({3}, {0.2, -1.0, 4.0});
    const Tensor eps({3}, {1.0, 2.0, 3.0});
    EXPECT_TRUE(add_noise(x, 0, eps, s).bit_equal(x));
    NoiseSchedule q;
    q.max_t = 1;
    q.alpha_bar = {1.0, 0.25};
    EXPECT_DOUBLE_EQ(add_noise(Tensor({1}, {1.0}), 1, Tensor({1}, {0.0}), q)[0], 0.5);
    EXPECT_THROW(add_noise(x, 1001, eps, s), ValidationError);
    EXPECT_THROW(add_noise(x, 1, Tensor({2}, {0, 0}), s), ShapeError);
}

TEST(AddNoise, MonteCarloVariance) {
    const auto s = NoiseSchedule::linear();
    const std::uint32_t t = 600;
    const std::size_t n = 100000;
    Rng rng(42);
    std::vector<double> x(n), eps(n);
    for (auto& v : x) v = rng.uniform(-1.5, 1.5);  // Var = 0.75
    for (auto& v : eps) v = rng.normal();
    const Tensor xt = add_noise(Tensor({n}, x), t, Tensor({n}, eps), s);
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += xt[i] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) var += (xt[i] - mean) * (xt[i] - mean) / static_cast<double>(n - 1);
    const double expected = s.alpha(t) * 0.75 + (1.0 - s.alpha(t));
    EXPECT_NEAR(var, expected, 0.02 * expected);
}

TEST(Timestep, RangeAndDeterminism) {
    const auto s = NoiseSchedule::linear();
    Rng a(7), b(7);
    std::uint32_t lo = 1000, hi = 0;
    for (int k = 0; k < 20000; ++k) {
        const auto t = sample_timestep(a, s);
        EXPECT_EQ(t, sample_timestep(b, s));
        lo = std::min(lo, t);
        hi = std::max(hi, t);
    }
    EXPECT_EQ(lo, 20u);
    EXPECT_EQ(hi, 980u);
    Rng c(1);
    for (int k = 0; k < 2000; ++k) EXPECT_LE(sample_timestep(c, s, 0.5), 500u);
    EXPECT_THROW(sample_timestep(c, s, 0.0), ValidationError);
    EXPECT_THROW(sample_timestep(c, s, 1.5), ValidationError);
}

TEST(Timestep, UniformByChiSquare) {
    const auto s = NoiseSchedule::linear();
    Rng rng(11);
    // 961 admissible values [20, 980] split into 31 bins of 31.
    std::vector<double> bins(31, 0.0);
    const std::size_t draws = 100000;
    for (std::size_t k = 0; k < draws; ++k) bins[(sample_timestep(rng, s) - 20) / 31] += 1.0;
    const double expected = static_cast<double>(draws) / 31.0;
    double chi2 = 0.0;
    for (double b : bins) chi2 += (b - expected) * (b - expected) / expected;
    EXPECT_LT(chi2, 59.7);  // 30 degrees of freedom, p = 0.001
}

TEST(Sds, PerfectDenoiserGivesZeroUpdate) {
    auto asset = AssetField::init(8, 2, 3);
    const auto before = asset;
    const auto cfg = tiny_config();
    AdamState adam(cfg.learning_rate);
    auto streams = SdsStreams::from_seed(9);
    const EchoGuidance guidance(streams.noise);
    const auto schedule = NoiseSchedule::linear();
    for (int k = 0; k < 3; ++k) {
        const auto report = sds_step(asset, adam, sample_training_pose(streams.pose, cfg), guidance, schedule, streams, cfg);
        for (double r : report.residual.data()) EXPECT_EQ(r, 0.0);
    }
    EXPECT_TRUE(same_weights(asset, before));
}

TEST(Sds, OracleResidualReducesToAlgebraicForm) {
    auto asset = AssetField::init(8, 2, 4);
    auto cfg = tiny_config(2);
    const Tensor target({4, 3}, {0.1, 0.2, 0.3, 0.9, 0.8, 0.7, 0.5, 0.5, 0.5, 0.0, 1.0, 0.25});
    const SyntheticOracleGuidance oracle([&](const CameraPose&, std::size_t) { return target; });
    for (auto weight : {TimestepWeight::Unit, TimestepWeight::OneMinusAlphaBar}) {
        auto schedule = NoiseSchedule::linear();
        schedule.weight = weight;
        AdamState adam(cfg.learning_rate);
        auto streams = SdsStreams::from_seed(2);
        for (int k = 0; k < 5; ++k) {
            const CameraPose pose = sample_training_pose(streams.pose, cfg);
            const auto report = sds_step(asset, adam, pose, oracle, schedule, streams, cfg);
            const double ab = schedule.alpha(report.t);
            for (std::size_t i = 0; i < 12; ++i) {
                const double expected =
                    schedule.w(report.t) * std::sqrt(ab) * (report.render[i] - target[i]) / std::sqrt(1.0 - ab);
                EXPECT_NEAR(report.residual[i], expected, 1e-10);
            }
        }
    }
}

TEST(Sds, NonFiniteResidualSkipsStep) {
    auto asset = AssetField::init(8, 2, 4);
    const auto before = asset;
    const auto cfg = tiny_config();
    AdamState adam(cfg.learning_rate);
    auto streams = SdsStreams::from_seed(1);
    testing::internal::CaptureStderr();
    const auto report =
        sds_step(asset, adam, CameraPose{}, NanGuidance{}, NoiseSchedule::linear(), streams, cfg);
    const auto err = testing::internal::GetCapturedStderr();
    EXPECT_TRUE(report.skipped);
    EXPECT_NE(err.find("non-finite"), std::string::npos);
    EXPECT_TRUE(same_weights(asset, before));
    EXPECT_EQ(adam.step, 0);
}

TEST(Sds, PartialOptimizeImprovesMostViews) {
    const auto scene = SyntheticScene::two_part();
    auto cfg = tiny_config(12, 24);
    const TargetRenderer target = [&](const CameraPose& p, std::size_t res) {
        RenderConfig rc = cfg.render;
        rc.resolution = res;
        return render_scene_rgb(scene, p, rc, false, cfg.background);
    };
    const SyntheticOracleGuidance oracle(target);
    auto asset = AssetField::init(32, 4, 0);
    AdamState adam(cfg.learning_rate);
    auto streams = SdsStreams::from_seed(0);
    const auto views = sample_sphere_poses(10, cfg.radius, cfg.elevations, 3);
    std::vector<double> before;
    for (const auto& v : views) before.push_back(photometric_error(asset, std::span(&v, 1), target, cfg));
    const auto result = partial_optimize(asset, adam, oracle, NoiseSchedule::linear(), streams, cfg, 300, views);
    ASSERT_EQ(result.views.size(), views.size());
    std::size_t improved = 0;
    for (std::size_t k = 0; k < views.size(); ++k) {
        if (photometric_error(asset, std::span(&views[k], 1), target, cfg) < before[k]) ++improved;
    }
    EXPECT_GE(improved, 9u);
    EXPECT_THROW(partial_optimize(asset, adam, oracle, NoiseSchedule::linear(), streams, cfg, 0, views),
                 ValidationError);
}

TEST(Sds, ZeroAlphaModulationMatchesPlainStep) {
    const auto scene = SyntheticScene::two_part();
    const auto prompt = synthetic_prompt(scene);
    const auto guidance = toy_guidance(prompt);
    const auto affinity = AffinityField::init({"red head", "blue body"}, 8, 2, 1);
    const auto cfg = tiny_config(6);
    RenderConfig arc;
    arc.resolution = 6;
    arc.samples_per_ray = 8;
    ModulationConfig zero;
    zero.alpha_cross = zero.alpha_self = 0.0;
    auto a = AssetField::init(8, 2, 2), b = a;
    AdamState adam_a(cfg.learning_rate), adam_b(cfg.learning_rate);
    auto sa = SdsStreams::from_seed(4), sb = SdsStreams::from_seed(4);
    const auto schedule = NoiseSchedule::linear();
    for (int k = 0; k < 3; ++k) {
        const CameraPose pose = sample_training_pose(sa.pose, cfg);
        sample_training_pose(sb.pose, cfg);
        const auto ra = sds_step(a, adam_a, pose, guidance, schedule, sa, cfg);
        const auto rb = modulated_sds_step(b, adam_b, affinity, prompt.parts, guidance, zero, arc, pose, schedule, sb, cfg);
        EXPECT_TRUE(ra.residual.bit_equal(rb.residual));
    }
    EXPECT_TRUE(same_weights(a, b));
}

TEST(Sds, ModulationNeedsAttentionHooks) {
    const SyntheticOracleGuidance oracle([](const CameraPose&, std::size_t r) { return Tensor::zeros({r * r, 3}); });
    auto asset = AssetField::init(8, 2, 2);
    const auto affinity = AffinityField::init({"a"}, 8, 2, 1);
    AdamState adam;
    auto streams = SdsStreams::from_seed(0);
    EXPECT_THROW(modulated_sds_step(asset, adam, affinity, {{"a", {0}}}, oracle, ModulationConfig{}, RenderConfig{},
                                    CameraPose{}, NoiseSchedule::linear(), streams, tiny_config()),
                 CapabilityError);
}

TEST(Sds, GuidanceParametersStayFrozen) {
    const auto scene = SyntheticScene::two_part();
    const auto prompt = synthetic_prompt(scene);
    const auto guidance = toy_guidance(prompt);
    const auto before = guidance.parameters();
    const auto affinity = AffinityField::init({"red head", "blue body"}, 8, 2, 1);
    auto asset = AssetField::init(8, 2, 2);
    const auto cfg = tiny_config(6);
    RenderConfig arc;
    arc.resolution = 6;
    arc.samples_per_ray = 8;
    AdamState adam(cfg.learning_rate);
    auto streams = SdsStreams::from_seed(8);
    for (int k = 0; k < 10; ++k) {
        modulated_sds_step(asset, adam, affinity, prompt.parts, guidance, ModulationConfig{}, arc,
                           sample_training_pose(streams.pose, cfg), NoiseSchedule::linear(), streams, cfg);
    }
    const auto after = guidance.parameters();
    ASSERT_EQ(before.size(), after.size());
    for (std::size_t k = 0; k < before.size(); ++k) EXPECT_TRUE(before[k].bit_equal(after[k]));
}

TEST(ToyGuidance, ExposesScoresAndModulationShiftsPartTokens) {
    const auto prompt = synthetic_prompt(SyntheticScene::two_part());
    const auto guidance = toy_guidance(prompt);
    const auto schedule = NoiseSchedule::linear();
    const std::size_t res = 4;
    const Tensor x_t = Tensor::full({res * res, 3}, 0.3);
    const CameraPose pose;
    AttentionTrace plain, mod;
    guidance.predict_noise(GuidanceInput{x_t, res, res, 300, schedule, pose}, nullptr, &plain);
    AttentionModulation m;
    m.parts = prompt.parts;
    m.affinity = {std::vector<double>(res * res, 1.0), std::vector<double>(res * res, 1e-4)};
    guidance.predict_noise(GuidanceInput{x_t, res, res, 300, schedule, pose}, &m, &mod);
    EXPECT_EQ(plain.cross_scores.shape(), (Shape{res * res, prompt.tokens.size()}));
    EXPECT_EQ(plain.self_scores.shape(), (Shape{res * res, res * res}));
    const std::size_t n = prompt.tokens.size();
    const std::size_t head = prompt.parts[0].indices[0], body = prompt.parts[1].indices[0];
    for (std::size_t j = 0; j < res * res; ++j) {
        EXPECT_EQ(mod.cross_scores[j * n + head], plain.cross_scores[j * n + head]);
        EXPECT_LT(mod.cross_attention[j * n + body], plain.cross_attention[j * n + body]);
    }
}
