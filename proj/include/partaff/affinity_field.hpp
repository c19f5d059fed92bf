#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "partaff/camera.hpp"
#include "partaff/extraction.hpp"
#include "partaff/field.hpp"
#include "partaff/render.hpp"

namespace partaff {

/// 3D field whose emissions are per-part affinities. Shared density, one
/// sigmoid emission channel per label.
struct AffinityField {
    MlpField mlp;
    std::vector<std::string> part_labels;

    void validate() const;
    static AffinityField init(std::vector<std::string> labels, std::size_t hidden, std::size_t frequencies,
                              std::uint64_t seed);
};

struct FieldSample {
    double density = 0.0;
    std::vector<double> emissions;
};

/// Density and per-part emissions at one point.
FieldSample field_eval(const AffinityField& field, const Vec3& point);

/// Per-part grids rendered from a pose; values[p] is row-major
/// resolution x resolution, clamped to [0, 1].
struct RenderedAffinity {
    int camera_id = 0;
    std::size_t resolution = 0;
    std::vector<std::string> part_labels;
    std::vector<std::vector<double>> values;
};

RenderedAffinity render_affinity(const AffinityField& field, const CameraPose& pose, const RenderConfig& config);

struct AffinityTrainConfig {
    std::size_t steps = 2000;
    double learning_rate = 5e-3;
    std::size_t rays_per_batch = 256;
    std::uint64_t seed = 0;
    std::vector<int> heldout_ids;
    std::size_t hidden = 64;
    std::size_t frequencies = 6;
    /// samples_per_ray, near/far and density floor for training rays. The
    /// resolution is taken from the maps.
    RenderConfig render;

    void validate() const;
};

struct FitResult {
    AffinityField field;
    double final_loss = 0.0;
    std::vector<double> loss_trace;
};

/// Fits the field to per-camera part maps with Adam on random ray batches
/// (stratified jitter along rays). Maps of cameras in `heldout_ids` are
/// ignored. With `init`, optimisation starts from those weights.
FitResult fit_affinity(std::span<const PartAffinityMap> maps, std::span<const CameraPose> poses,
                       const AffinityTrainConfig& config, const std::optional<AffinityField>& init = std::nullopt);

struct HeldoutReport {
    double mse = 0.0;
    std::vector<std::pair<int, double>> per_view;
};

/// Midpoint-sampled renders against the given maps, averaged over pixels,
/// parts and views.
HeldoutReport evaluate_heldout(const AffinityField& field, std::span<const PartAffinityMap> maps,
                               std::span<const CameraPose> poses, const RenderConfig& config);

/// Groups maps by camera and orders parts by `labels`. Throws when a camera
/// lacks a part or has an extra one, or when resolutions differ.
struct CameraMaps {
    int camera_id = 0;
    std::size_t resolution = 0;
    std::vector<const PartAffinityMap*> parts;
};
std::vector<CameraMaps> group_maps(std::span<const PartAffinityMap> maps, std::vector<std::string>& labels);

const CameraPose& find_pose(std::span<const CameraPose> poses, int id);

}  // namespace partaff
