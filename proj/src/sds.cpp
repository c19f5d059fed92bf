#include "partaff/sds.hpp"

#include <cmath>
#include <iostream>

#include "partaff/error.hpp"

namespace partaff {

AssetField AssetField::init(std::size_t hidden, std::size_t frequencies, std::uint64_t seed) {
    return AssetField{MlpField::init(frequencies, hidden, 4, seed)};
}

void AssetField::validate() const {
    mlp.validate();
    if (mlp.outputs != 4) throw ValidationError("asset field must have 1 density + 3 RGB outputs");
}

void SdsConfig::validate() const {
    render.validate();
    if (background.size() != 3) throw ValidationError("background must be an RGB triple");
    if (!(learning_rate > 0.0)) throw ValidationError("SDS learning rate must be positive");
    if (!(range_fraction > 0.0 && range_fraction <= 1.0)) throw ValidationError("range_fraction must lie in (0, 1]");
}

SdsStreams SdsStreams::from_seed(std::uint64_t seed) {
    Rng root(seed);
    return SdsStreams{root.split(1), root.split(2), root.split(3)};
}

Var render_asset(std::span<const Var> weights, const AssetField& asset, const CameraPose& pose,
                 const SdsConfig& config) {
    const auto rays = rays_for(pose, config.render.resolution);
    const RaySamples s = sample_rays(rays, config.render);
    const auto out = eval_field(weights, encode_points(s.points, asset.mlp.frequencies), config.render.density_floor);
    return composite(out.density, out.emission, s.samples, s.delta, config.background);
}

Tensor render_asset_values(const AssetField& asset, const CameraPose& pose, const SdsConfig& config) {
    const auto rays = rays_for(pose, config.render.resolution);
    const auto flat = render_values(
        [&](std::span<const double> xyz, std::vector<double>& d, std::vector<double>& e) {
            eval_field_values(asset.mlp, xyz, d, e);
        },
        rays, 3, config.render, config.background);
    return Tensor({rays.size(), 3}, flat);
}

CameraPose sample_training_pose(Rng& rng, const SdsConfig& config) {
    CameraPose p;
    p.radius = config.radius;
    p.fov = config.fov;
    p.azimuth = rng.uniform(0.0, 360.0);
    p.elevation = rng.uniform(config.elevations.min_deg, config.elevations.max_deg);
    return p;
}

namespace {

SdsStepReport step_impl(AssetField& asset, AdamState& adam, const CameraPose& pose, const GuidanceModel& guidance,
                        const AttentionModulation* modulation, const NoiseSchedule& schedule, SdsStreams& streams,
                        const SdsConfig& config) {
    config.validate();
    SdsStepReport report;
    report.pose = pose;
    report.t = sample_timestep(streams.timestep, schedule, config.range_fraction);

    Tape tape;
    std::vector<Var> w;
    for (const auto& t : asset.mlp.weights) w.push_back(tape.parameter(t));
    const Var x = render_asset(w, asset, pose, config);
    report.render = x.value();

    std::vector<double> eps(x.value().size());
    for (auto& e : eps) e = streams.noise.normal();
    const Tensor epsilon(x.shape(), std::move(eps));
    const Tensor x_t = add_noise(x.value(), report.t, epsilon, schedule);
    const std::size_t res = config.render.resolution;
    const Tensor eps_hat = guidance.predict_noise(GuidanceInput{x_t, res, res, report.t, schedule, pose}, modulation);

    const double wt = schedule.w(report.t);
    std::vector<double> r(eps_hat.size());
    double sq = 0.0;
    bool finite = true;
    for (std::size_t i = 0; i < r.size(); ++i) {
        r[i] = wt * (eps_hat[i] - epsilon[i]);
        finite = finite && std::isfinite(r[i]);
        sq += r[i] * r[i];
    }
    report.residual = Tensor::scratch(x.shape(), r);
    if (!finite) {
        report.skipped = true;
        std::cerr << "{\"warning\":\"non-finite SDS residual, step skipped\",\"t\":" << report.t << "}\n";
        return report;
    }
    report.residual_rms = std::sqrt(sq / static_cast<double>(r.size()));

    // d/dtheta sum(x * r) = r . dx/dtheta with r held constant.
    const Var surrogate = sum(mul(x, tape.constant(Tensor(x.shape(), std::move(r)))));
    const auto grads = tape.backward(surrogate);
    adam_step(asset.mlp.weights, grads, adam);
    return report;
}

}  // namespace

SdsStepReport sds_step(AssetField& asset, AdamState& adam, const CameraPose& pose, const GuidanceModel& guidance,
                       const NoiseSchedule& schedule, SdsStreams& streams, const SdsConfig& config) {
    return step_impl(asset, adam, pose, guidance, nullptr, schedule, streams, config);
}

std::vector<std::vector<double>> affinity_vectors(const AffinityField& affinity, const CameraPose& pose,
                                                  const RenderConfig& affinity_render, std::size_t height,
                                                  std::size_t width, double floor) {
    const auto rendered = render_affinity(affinity, pose, affinity_render);
    std::vector<std::vector<double>> out;
    out.reserve(rendered.values.size());
    for (const auto& grid : rendered.values) {
        out.push_back(resample_affinity(grid, rendered.resolution, rendered.resolution, height * width, height,
                                        width, floor));
    }
    return out;
}

SdsStepReport modulated_sds_step(AssetField& asset, AdamState& adam, const AffinityField& affinity,
                                 const std::vector<PartSpec>& parts, const GuidanceModel& guidance,
                                 const ModulationConfig& modulation, const RenderConfig& affinity_render,
                                 const CameraPose& pose, const NoiseSchedule& schedule, SdsStreams& streams,
                                 const SdsConfig& config) {
    if (!guidance.exposes_attention()) throw CapabilityError("guidance model exposes no attention hooks");
    modulation.validate();
    if (parts.size() != affinity.part_labels.size()) {
        throw ValidationError("part token sets do not match the affinity field's parts");
    }
    const std::size_t res = config.render.resolution;
    AttentionModulation mod;
    mod.config = modulation;
    mod.parts = parts;
    mod.affinity = affinity_vectors(affinity, pose, affinity_render, res, res, modulation.floor);
    return step_impl(asset, adam, pose, guidance, &mod, schedule, streams, config);
}

PartialResult partial_optimize(AssetField& asset, AdamState& adam, const GuidanceModel& guidance,
                               const NoiseSchedule& schedule, SdsStreams& streams, const SdsConfig& config,
                               std::size_t steps, std::span<const CameraPose> extraction_views) {
    if (steps < 1) throw ValidationError("partial optimisation needs at least one step");
    PartialResult result;
    result.residual_trace.reserve(steps);
    for (std::size_t s = 0; s < steps; ++s) {
        const CameraPose pose = sample_training_pose(streams.pose, config);
        result.residual_trace.push_back(sds_step(asset, adam, pose, guidance, schedule, streams, config).residual_rms);
    }
    for (const auto& v : extraction_views) result.views.push_back(render_asset_values(asset, v, config));
    return result;
}

double photometric_error(const AssetField& asset, std::span<const CameraPose> poses, const TargetRenderer& target,
                         const SdsConfig& config) {
    if (poses.empty()) throw ValidationError("photometric error needs poses");
    double total = 0.0;
    for (const auto& p : poses) {
        const Tensor x = render_asset_values(asset, p, config);
        const Tensor y = target(p, config.render.resolution);
        double acc = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
        total += acc / static_cast<double>(x.size());
    }
    return total / static_cast<double>(poses.size());
}

}  // namespace partaff
