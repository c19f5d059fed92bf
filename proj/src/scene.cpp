#include "partaff/scene.hpp"

#include <algorithm>
#include <cmath>

#include "partaff/error.hpp"
#include "partaff/rng.hpp"

namespace partaff {

SyntheticScene SyntheticScene::two_part() {
    SyntheticScene s;
    s.labels = {"red head", "blue body"};
    s.blobs = {{Vec3(0.0, 0.0, 0.5), 0.3}, {Vec3(0.0, 0.0, -0.25), 0.3}};
    s.colors = {Rgb{0.9, 0.15, 0.1}, Rgb{0.1, 0.2, 0.9}};
    return s;
}

double SyntheticScene::density(const Vec3& p) const {
    const double z = (sphere_radius - p.norm()) / edge_width;
    const double inside = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    return density_scale * inside;
}

double SyntheticScene::part_affinity(std::size_t part, const Vec3& p) const {
    const auto& b = blobs.at(part);
    return std::exp(-(p - b.center).squaredNorm() / (2.0 * b.width * b.width));
}

Rgb SyntheticScene::color(const Vec3& p) const {
    Rgb c = base_color;
    for (std::size_t k = 0; k < blobs.size(); ++k) {
        const double a = part_affinity(k, p);
        for (int ch = 0; ch < 3; ++ch) c[ch] = (1.0 - a) * c[ch] + a * colors[k][ch];
    }
    return c;
}

PointField SyntheticScene::affinity_point_field() const {
    return [this](std::span<const double> xyz, std::vector<double>& density_out, std::vector<double>& emission) {
        const std::size_t n = xyz.size() / 3;
        const std::size_t parts = blobs.size();
        density_out.resize(n);
        emission.resize(n * parts);
        for (std::size_t i = 0; i < n; ++i) {
            const Vec3 p(xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]);
            density_out[i] = density(p);
            for (std::size_t k = 0; k < parts; ++k) emission[i * parts + k] = part_affinity(k, p);
        }
    };
}

PointField SyntheticScene::color_point_field(bool neutral) const {
    return [this, neutral](std::span<const double> xyz, std::vector<double>& density_out,
                           std::vector<double>& emission) {
        const std::size_t n = xyz.size() / 3;
        density_out.resize(n);
        emission.resize(n * 3);
        for (std::size_t i = 0; i < n; ++i) {
            const Vec3 p(xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]);
            density_out[i] = density(p);
            const Rgb c = neutral ? base_color : color(p);
            for (int ch = 0; ch < 3; ++ch) emission[i * 3 + ch] = c[ch];
        }
    };
}

std::vector<PartAffinityMap> render_scene_maps(const SyntheticScene& scene, std::span<const CameraPose> poses,
                                               const RenderConfig& config) {
    std::vector<PartAffinityMap> maps;
    const std::size_t parts = scene.labels.size();
    for (const auto& pose : poses) {
        const auto rays = rays_for(pose, config.resolution);
        const auto flat = render_values(scene.affinity_point_field(), rays, parts, config);
        for (std::size_t p = 0; p < parts; ++p) {
            PartAffinityMap m{scene.labels[p], static_cast<std::uint32_t>(pose.id), config.resolution,
                              config.resolution, std::vector<double>(rays.size())};
            for (std::size_t r = 0; r < rays.size(); ++r) m.values[r] = std::clamp(flat[r * parts + p], 0.0, 1.0);
            maps.push_back(std::move(m));
        }
    }
    return maps;
}

Tensor render_scene_rgb(const SyntheticScene& scene, const CameraPose& pose, const RenderConfig& config,
                        bool neutral, std::span<const double> background) {
    const auto rays = rays_for(pose, config.resolution);
    auto flat = render_values(scene.color_point_field(neutral), rays, 3, config, background);
    return Tensor({rays.size(), 3}, std::move(flat));
}

std::vector<std::vector<std::uint8_t>> argmax_regions(std::span<const std::vector<double>> grids,
                                                      double relative_threshold) {
    if (grids.empty()) return {};
    const std::size_t n = grids.front().size();
    std::vector<double> peak(grids.size(), 0.0);
    for (std::size_t p = 0; p < grids.size(); ++p) {
        if (grids[p].size() != n) throw ShapeError("argmax_regions: grids differ in size");
        peak[p] = *std::max_element(grids[p].begin(), grids[p].end());
    }
    std::vector<std::vector<std::uint8_t>> masks(grids.size(), std::vector<std::uint8_t>(n, 0));
    for (std::size_t j = 0; j < n; ++j) {
        std::size_t best = 0;
        for (std::size_t p = 1; p < grids.size(); ++p) {
            if (grids[p][j] > grids[best][j]) best = p;
        }
        if (peak[best] > 0.0 && grids[best][j] >= relative_threshold * peak[best]) masks[best][j] = 1;
    }
    return masks;
}

double mask_iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    if (a.size() != b.size()) throw ShapeError("mask_iou: masks differ in size");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += (a[i] && b[i]) ? 1 : 0;
        uni += (a[i] || b[i]) ? 1 : 0;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<double> gaussian_blur(std::span<const double> grid, std::size_t height, std::size_t width, double sigma) {
    if (grid.size() != height * width) throw ShapeError("gaussian_blur: grid size mismatch");
    if (!(sigma > 0.0)) return {grid.begin(), grid.end()};
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(2 * radius + 1);
    double z = 0.0;
    for (int k = -radius; k <= radius; ++k) z += (kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma)));
    for (auto& k : kernel) k /= z;
    auto clampi = [](long v, long hi) { return static_cast<std::size_t>(std::clamp(v, 0L, hi)); };
    std::vector<double> tmp(grid.size()), out(grid.size());
    const long H = static_cast<long>(height), W = static_cast<long>(width);
    for (long y = 0; y < H; ++y) {
        for (long x = 0; x < W; ++x) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * grid[y * W + clampi(x + k, W - 1)];
            tmp[y * W + x] = acc;
        }
    }
    for (long y = 0; y < H; ++y) {
        for (long x = 0; x < W; ++x) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp[clampi(y + k, H - 1) * W + x];
            out[y * W + x] = acc;
        }
    }
    return out;
}

std::vector<AttentionRecord> synthetic_attention(const SyntheticScene& scene, const CameraPose& pose,
                                                 const PromptSpec& prompt, const ExtractionWindow& window,
                                                 const SyntheticAttentionConfig& config) {
    window.validate();
    prompt.validate();
    if (prompt.parts.size() != scene.labels.size()) throw ValidationError("prompt parts do not match scene parts");
    RenderConfig rc;
    rc.resolution = config.resolution;
    const auto maps = render_scene_maps(scene, std::span<const CameraPose>(&pose, 1), rc);
    std::vector<std::vector<double>> grids;
    for (const auto& m : maps) grids.push_back(m.values);
    const auto masks = argmax_regions(grids);

    const std::size_t pixels = config.resolution * config.resolution;
    const std::size_t n = prompt.tokens.size();
    std::vector<std::vector<double>> token_maps(n, std::vector<double>(pixels, 0.0));
    for (std::size_t p = 0; p < prompt.parts.size(); ++p) {
        const auto label_it = std::find(scene.labels.begin(), scene.labels.end(), prompt.parts[p].label);
        if (label_it == scene.labels.end()) throw ValidationError("prompt part '" + prompt.parts[p].label + "' not in scene");
        const auto& mask = masks[static_cast<std::size_t>(label_it - scene.labels.begin())];
        const std::vector<double> m(mask.begin(), mask.end());
        const auto blurred = gaussian_blur(m, config.resolution, config.resolution, config.blur_sigma);
        for (auto i : prompt.parts[p].indices) token_maps[i] = blurred;
    }

    Rng rng(config.seed ^ (static_cast<std::uint64_t>(pose.id) * 0x9E3779B97F4A7C15ull));
    std::vector<AttentionRecord> records;
    for (std::int64_t t = window.t_start; t >= static_cast<std::int64_t>(window.t_end);
         t -= static_cast<std::int64_t>(config.timestep_stride)) {
        for (auto layer : window.layers) {
            AttentionRecord r;
            r.t = static_cast<std::uint32_t>(t);
            r.layer = layer;
            r.camera_id = static_cast<std::uint32_t>(pose.id);
            r.height = r.width = static_cast<std::uint32_t>(config.resolution);
            r.tokens = static_cast<std::uint32_t>(n);
            r.values.resize(pixels * n);
            for (std::size_t j = 0; j < pixels; ++j) {
                for (std::size_t i = 0; i < n; ++i) {
                    const double jitter = 1.0 + config.noise * (2.0 * rng.uniform() - 1.0);
                    r.values[j * n + i] = static_cast<float>((0.02 + token_maps[i][j]) * jitter);
                }
            }
            records.push_back(std::move(r));
        }
        if (config.timestep_stride == 0) break;
    }
    return records;
}

PromptSpec synthetic_prompt(const SyntheticScene& scene) {
    PromptSpec spec;
    spec.tokens = whitespace_tokenize("a creature with a " + scene.labels.at(0) + " and a " + scene.labels.at(1));
    for (const auto& label : scene.labels) spec.parts.push_back(resolve_part_indices(spec.tokens, label));
    return spec;
}

}  // namespace partaff
