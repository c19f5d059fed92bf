#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "partaff/camera.hpp"
#include "partaff/extraction.hpp"
#include "partaff/guidance.hpp"
#include "partaff/render.hpp"

namespace partaff {

/// Analytic ground truth: a soft sphere whose surface carries Gaussian
/// part blobs. Used to synthesise affinity maps, attention and targets.
struct SyntheticScene {
    struct Blob {
        Vec3 center;
        double width = 0.3;
    };

    double sphere_radius = 0.6;
    double density_scale = 40.0;
    double edge_width = 0.03;
    std::vector<std::string> labels;
    std::vector<Blob> blobs;
    std::vector<Rgb> colors;
    Rgb base_color{0.6, 0.6, 0.6};

    /// "red head" above, "blue body" below.
    static SyntheticScene two_part();

    double density(const Vec3& p) const;
    double part_affinity(std::size_t part, const Vec3& p) const;
    /// Blob-weighted mix of part colours over the base colour.
    Rgb color(const Vec3& p) const;

    PointField affinity_point_field() const;
    /// Colour field; with `neutral` every point has the base colour.
    PointField color_point_field(bool neutral) const;
};

/// Ground-truth per-part affinity renders as maps (not normalised).
std::vector<PartAffinityMap> render_scene_maps(const SyntheticScene& scene, std::span<const CameraPose> poses,
                                               const RenderConfig& config);

/// [res * res, 3] RGB render of the scene over `background`.
Tensor render_scene_rgb(const SyntheticScene& scene, const CameraPose& pose, const RenderConfig& config,
                        bool neutral, std::span<const double> background);

/// Argmax regions: pixel j belongs to part p when p has the largest value
/// at j and that value is at least `relative_threshold` times the part's
/// image maximum. Returns one 0/1 mask per part.
std::vector<std::vector<std::uint8_t>> argmax_regions(std::span<const std::vector<double>> grids,
                                                      double relative_threshold = 0.5);

/// Intersection over union; two empty masks give 1.
double mask_iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

/// Separable Gaussian blur with edge clamping; radius ceil(3 sigma).
std::vector<double> gaussian_blur(std::span<const double> grid, std::size_t height, std::size_t width, double sigma);

struct SyntheticAttentionConfig {
    std::size_t resolution = 32;
    double blur_sigma = 2.0;
    std::uint32_t timestep_stride = 50;
    double noise = 0.1;
    std::uint64_t seed = 0;
};

/// Attention records for one camera: every part token attends to its
/// blurred ground-truth argmax region, other tokens to a weak uniform
/// field, with multiplicative noise. One record per (t, layer) with t
/// running from window.t_start down to window.t_end in `timestep_stride`
/// steps.
std::vector<AttentionRecord> synthetic_attention(const SyntheticScene& scene, const CameraPose& pose,
                                                 const PromptSpec& prompt, const ExtractionWindow& window,
                                                 const SyntheticAttentionConfig& config);

/// Prompt whose part phrases match the scene labels.
PromptSpec synthetic_prompt(const SyntheticScene& scene);

}  // namespace partaff
