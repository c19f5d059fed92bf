#include <gtest/gtest.h>

#include <cmath>

#include "partaff/affinity_field.hpp"
#include "partaff/error.hpp"
#include "partaff/gradcheck.hpp"
#include "partaff/rng.hpp"

using namespace partaff;

namespace {

std::vector<PartAffinityMap> maps_from_field(const AffinityField& f, std::span<const CameraPose> poses,
                                             const RenderConfig& rc) {
    std::vector<PartAffinityMap> maps;
    for (const auto& pose : poses) {
        const auto r = render_affinity(f, pose, rc);
        for (std::size_t p = 0; p < r.values.size(); ++p) {
            maps.push_back({f.part_labels[p], static_cast<std::uint32_t>(pose.id), rc.resolution, rc.resolution,
                            r.values[p]});
        }
    }
    return maps;
}

}  // namespace

TEST(AffinityField, ZeroFinalLayerGivesSoftplusZeroAndHalf) {
    AffinityField f;
    f.mlp = MlpField::init(6, 16, 3, 1, true);
    f.part_labels = {"a", "b"};
    const auto s = field_eval(f, Vec3(0.3, -0.1, 0.7));
    EXPECT_NEAR(s.density, std::log(2.0), 1e-15);
    ASSERT_EQ(s.emissions.size(), 2u);
    EXPECT_EQ(s.emissions[0], 0.5);
    EXPECT_EQ(s.emissions[1], 0.5);
}

TEST(AffinityField, EmissionsStrictlyInsideUnitInterval) {
    const auto f = AffinityField::init({"a", "b", "c"}, 32, 6, 4);
    Rng rng(8);
    for (int k = 0; k < 1000; ++k) {
        const auto s = field_eval(f, Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)));
        EXPECT_GE(s.density, 0.0);
        for (double e : s.emissions) {
            EXPECT_GT(e, 0.0);
            EXPECT_LT(e, 1.0);
        }
    }
}

TEST(AffinityField, NonFinitePointRejected) {
    const auto f = AffinityField::init({"a"}, 8, 2, 0);
    EXPECT_THROW(field_eval(f, Vec3(NAN, 0, 0)), DomainError);
}

TEST(AffinityField, SummedOutputGradientMatchesFiniteDifferences) {
    const auto f = AffinityField::init({"a", "b"}, 8, 3, 5);
    Rng rng(2);
    std::vector<double> pts(3 * 20);
    for (auto& v : pts) v = rng.uniform(-1, 1);
    const Tensor enc = encode_points(pts, 3);
    ScalarFn fn = [enc](Tape&, std::span<const Var> w) {
        const auto out = eval_field(w, enc);
        return add(sum(out.density), sum(out.emission));
    };
    const auto report = finite_diff_check(fn, f.mlp.weights);
    EXPECT_TRUE(report.passed);
    EXPECT_LT(report.max_rel_error, 1e-5);
}

TEST(AffinityField, TwoRayLossGradient) {
    const auto f = AffinityField::init({"a", "b"}, 6, 2, 9);
    CameraPose pose;
    auto rays = rays_for(pose, 4);
    rays.resize(2);
    RenderConfig rc;
    rc.samples_per_ray = 12;
    const RaySamples s = sample_rays(rays, rc);
    const Tensor enc = encode_points(s.points, 2);
    const Tensor target({2, 2}, {0.9, 0.1, 0.2, 0.7});
    ScalarFn fn = [=](Tape& tape, std::span<const Var> w) {
        const auto out = eval_field(w, enc);
        return mse(composite(out.density, out.emission, s.samples, s.delta), tape.constant(target));
    };
    EXPECT_LT(finite_diff_check(fn, f.mlp.weights).max_rel_error, 1e-4);
}

TEST(AffinityField, RendersStayInUnitIntervalAndAreDeterministic) {
    const auto f = AffinityField::init({"a", "b"}, 16, 4, 3);
    CameraPose pose;
    pose.azimuth = 120;
    RenderConfig rc;
    rc.resolution = 12;
    rc.samples_per_ray = 32;
    const auto a = render_affinity(f, pose, rc);
    const auto b = render_affinity(f, pose, rc);
    for (std::size_t p = 0; p < 2; ++p) {
        EXPECT_EQ(a.values[p], b.values[p]);
        for (double v : a.values[p]) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(AffinityField, SelfConsistentFit) {
    // Teacher renders are fitted starting from a perturbed copy of the
    // teacher; the loss must fall below 1e-4 within 200 steps.
    const auto teacher = AffinityField::init({"a", "b"}, 16, 4, 12);
    const auto poses = sample_sphere_poses(6, kDefaultRadius, {}, 1);
    RenderConfig rc;
    rc.resolution = 16;
    rc.samples_per_ray = 32;
    const auto maps = maps_from_field(teacher, poses, rc);
    AffinityField start = teacher;
    Rng rng(4);
    for (auto& w : start.mlp.weights) {
        auto v = w.to_vector();
        for (auto& x : v) x += rng.uniform(-0.05, 0.05);
        w = Tensor(w.shape(), v);
    }
    AffinityTrainConfig cfg;
    cfg.steps = 200;
    cfg.learning_rate = 2e-3;
    cfg.render.samples_per_ray = 32;
    const auto fit = fit_affinity(maps, poses, cfg, start);
    ASSERT_EQ(fit.loss_trace.size(), 200u);
    EXPECT_LT(fit.loss_trace.front(), 1e-2);
    double tail = 0.0;
    for (std::size_t k = 180; k < 200; ++k) tail += fit.loss_trace[k] / 20.0;
    EXPECT_LT(tail, 1e-4);
}

TEST(AffinityField, HeldoutOfExactRendersIsNearZero) {
    const auto f = AffinityField::init({"a", "b"}, 16, 4, 6);
    const auto poses = sample_sphere_poses(3, kDefaultRadius, {}, 2);
    RenderConfig rc;
    rc.resolution = 8;
    rc.samples_per_ray = 32;
    const auto report = evaluate_heldout(f, maps_from_field(f, poses, rc), poses, rc);
    EXPECT_LT(report.mse, 1e-6);
    EXPECT_EQ(report.per_view.size(), 3u);
}

TEST(AffinityField, HeldoutOnTrainingViewEqualsTrainingResidual) {
    const auto f = AffinityField::init({"a"}, 8, 2, 6);
    const auto poses = sample_sphere_poses(1, kDefaultRadius, {}, 2);
    RenderConfig rc;
    rc.resolution = 4;
    rc.samples_per_ray = 16;
    PartAffinityMap target{"a", 0, 4, 4, std::vector<double>(16, 0.25)};
    const auto rendered = render_affinity(f, poses[0], rc);
    double expected = 0.0;
    for (std::size_t j = 0; j < 16; ++j) expected += std::pow(rendered.values[0][j] - 0.25, 2) / 16.0;
    EXPECT_NEAR(evaluate_heldout(f, std::vector<PartAffinityMap>{target}, poses, rc).mse, expected, 1e-15);
}

TEST(AffinityField, FitErrors) {
    const auto poses = sample_sphere_poses(2, kDefaultRadius, {}, 0);
    std::vector<PartAffinityMap> maps{{"a", 0, 2, 2, std::vector<double>(4, 0.5)},
                                      {"a", 1, 2, 2, std::vector<double>(4, 0.5)},
                                      {"b", 0, 2, 2, std::vector<double>(4, 0.5)}};
    AffinityTrainConfig cfg;
    cfg.steps = 1;
    EXPECT_THROW(fit_affinity(maps, poses, cfg), ValidationError);
    maps.pop_back();
    maps[1].camera_id = 7;
    EXPECT_THROW(fit_affinity(maps, poses, cfg), ValidationError);
    maps[1].camera_id = 1;
    cfg.steps = 0;
    EXPECT_THROW(fit_affinity(maps, poses, cfg), ValidationError);
    cfg.steps = 1;
    cfg.heldout_ids = {0, 1};
    EXPECT_THROW(fit_affinity(maps, poses, cfg), ValidationError);
    EXPECT_THROW(evaluate_heldout(AffinityField::init({"a"}, 4, 1, 0), {}, poses, RenderConfig{}), ValidationError);
}
