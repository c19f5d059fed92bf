#pragma once

#include <span>
#include <vector>

#include "partaff/adam.hpp"
#include "partaff/affinity_field.hpp"
#include "partaff/field.hpp"
#include "partaff/guidance.hpp"
#include "partaff/render.hpp"
#include "partaff/schedule.hpp"

namespace partaff {

/// Trainable asset: shared MLP substrate with 1 density + 3 RGB outputs.
struct AssetField {
    MlpField mlp;

    static AssetField init(std::size_t hidden, std::size_t frequencies, std::uint64_t seed);
    void validate() const;
};

struct SdsConfig {
    RenderConfig render{48, 16};
    std::vector<double> background{0.0, 0.0, 0.0};
    double learning_rate = 1e-2;
    double range_fraction = 1.0;
    double radius = kDefaultRadius;
    double fov = kDefaultFov;
    ElevationRange elevations;

    void validate() const;
};

/// Independent streams so that adding a consumer never shifts another's draws.
struct SdsStreams {
    Rng timestep;
    Rng noise;
    Rng pose;

    static SdsStreams from_seed(std::uint64_t seed);
};

/// Records the asset render on `weights`' tape; returns [res * res, 3].
Var render_asset(std::span<const Var> weights, const AssetField& asset, const CameraPose& pose,
                 const SdsConfig& config);
Tensor render_asset_values(const AssetField& asset, const CameraPose& pose, const SdsConfig& config);

CameraPose sample_training_pose(Rng& rng, const SdsConfig& config);

struct SdsStepReport {
    std::uint32_t t = 0;
    CameraPose pose;
    Tensor render;
    Tensor residual;
    double residual_rms = 0.0;
    bool skipped = false;
};

/// One score-distillation update: render x, draw (t, eps), compute
/// r = w(t) (eps_hat - eps) with eps_hat held constant, push r through
/// dx/dtheta and apply Adam. A non-finite residual skips the update.
SdsStepReport sds_step(AssetField& asset, AdamState& adam, const CameraPose& pose, const GuidanceModel& guidance,
                       const NoiseSchedule& schedule, SdsStreams& streams, const SdsConfig& config);

/// Same update, with affinity maps rendered from the same pose modulating
/// the guidance model's attention. Throws CapabilityError when the
/// guidance exposes no attention.
SdsStepReport modulated_sds_step(AssetField& asset, AdamState& adam, const AffinityField& affinity,
                                 const std::vector<PartSpec>& parts, const GuidanceModel& guidance,
                                 const ModulationConfig& modulation, const RenderConfig& affinity_render,
                                 const CameraPose& pose, const NoiseSchedule& schedule, SdsStreams& streams,
                                 const SdsConfig& config);

/// Resampled, clamped affinity vectors (one per part) at the asset's
/// render resolution for a pose.
std::vector<std::vector<double>> affinity_vectors(const AffinityField& affinity, const CameraPose& pose,
                                                  const RenderConfig& affinity_render, std::size_t height,
                                                  std::size_t width, double floor);

struct PartialResult {
    std::vector<double> residual_trace;
    std::vector<Tensor> views;
};

/// Runs `steps` SDS updates on random poses, then renders the asset at
/// every extraction view.
PartialResult partial_optimize(AssetField& asset, AdamState& adam, const GuidanceModel& guidance,
                               const NoiseSchedule& schedule, SdsStreams& streams, const SdsConfig& config,
                               std::size_t steps, std::span<const CameraPose> extraction_views);

/// Mean squared error between asset renders and targets over poses.
double photometric_error(const AssetField& asset, std::span<const CameraPose> poses, const TargetRenderer& target,
                         const SdsConfig& config);

}  // namespace partaff
