#include "partaff/render.hpp"

#include <cmath>

#include "partaff/error.hpp"
#include "partaff/parallel.hpp"

namespace partaff {

void RenderConfig::validate() const {
    if (samples_per_ray < 2) throw ValidationError("samples_per_ray must be at least 2");
    if (resolution < 1) throw ValidationError("render resolution must be at least 1");
    if (near >= 0.0 && far >= 0.0 && !(far > near)) throw ValidationError("render far must exceed near");
    if (density_floor < 0.0) throw ValidationError("density floor must be non-negative");
}

RaySamples sample_rays(std::span<const Ray> rays, const RenderConfig& config, Rng* jitter) {
    config.validate();
    RaySamples s;
    s.rays = rays.size();
    s.samples = config.samples_per_ray;
    s.points.resize(s.rays * s.samples * 3);
    s.delta.resize(s.rays);
    const bool override_bounds = config.near >= 0.0 && config.far >= 0.0;
    for (std::size_t r = 0; r < s.rays; ++r) {
        const Ray& ray = rays[r];
        const double near = override_bounds ? config.near : ray.near;
        const double far = override_bounds ? config.far : ray.far;
        const double width = (far - near) / static_cast<double>(s.samples);
        s.delta[r] = width;
        for (std::size_t i = 0; i < s.samples; ++i) {
            const double u = jitter ? jitter->uniform() : 0.5;
            const double t = near + (static_cast<double>(i) + u) * width;
            double* p = s.points.data() + (r * s.samples + i) * 3;
            for (int a = 0; a < 3; ++a) p[a] = ray.origin[a] + t * ray.direction[a];
        }
    }
    return s;
}

std::vector<double> composite_values(std::span<const double> sigma, std::span<const double> emission,
                                     std::size_t samples, std::size_t channels, std::span<const double> delta,
                                     std::span<const double> background) {
    const std::size_t rays = delta.size();
    if (sigma.size() != rays * samples || emission.size() != rays * samples * channels) {
        throw ShapeError("composite: sample counts do not match ray batch");
    }
    if (!background.empty() && background.size() != channels) throw ShapeError("composite: background size");
    std::vector<double> out(rays * channels, 0.0);
    for (std::size_t r = 0; r < rays; ++r) {
        double transmittance = 1.0;
        double* o = out.data() + r * channels;
        for (std::size_t i = 0; i < samples; ++i) {
            const std::size_t k = r * samples + i;
            const double alpha = 1.0 - std::exp(-sigma[k] * delta[r]);
            const double w = transmittance * alpha;
            for (std::size_t c = 0; c < channels; ++c) o[c] += w * emission[k * channels + c];
            transmittance *= 1.0 - alpha;
        }
        if (!background.empty()) {
            for (std::size_t c = 0; c < channels; ++c) o[c] += transmittance * background[c];
        }
    }
    return out;
}

Var composite(Var sigma, Var emission, std::size_t samples, std::vector<double> delta,
              std::vector<double> background) {
    const std::size_t rays = delta.size();
    const std::size_t channels = (rays * samples != 0) ? emission.value().size() / (rays * samples) : 0;
    if (sigma.value().size() != rays * samples || emission.value().size() != rays * samples * channels) {
        throw ShapeError("composite: sample counts do not match ray batch");
    }
    Tensor sv = sigma.value();
    Tensor ev = emission.value();
    auto out = composite_values(sv.data(), ev.data(), samples, channels, delta, background);
    return sigma.tape()->record(
        Tensor({rays, channels}, std::move(out)), {sigma, emission},
        [sv, ev, samples, channels, delta = std::move(delta), background = std::move(background)](
            std::span<const double> g, std::span<std::vector<double>*> gi) {
            const std::size_t rays = delta.size();
            std::vector<double> trans(samples + 1);
            std::vector<double> suffix(channels);
            for (std::size_t r = 0; r < rays; ++r) {
                const double* gr = g.data() + r * channels;
                const std::size_t base = r * samples;
                trans[0] = 1.0;
                for (std::size_t i = 0; i < samples; ++i) trans[i + 1] = trans[i] * std::exp(-sv[base + i] * delta[r]);
                // suffix_c = sum_{i>k} w_i e_ic + T_end * bg_c, accumulated from the back.
                double suffix_dot = 0.0;
                if (!background.empty()) {
                    for (std::size_t c = 0; c < channels; ++c) suffix_dot += gr[c] * trans[samples] * background[c];
                }
                for (std::size_t k = samples; k-- > 0;) {
                    const std::size_t idx = base + k;
                    const double w = trans[k] - trans[k + 1];
                    double e_dot = 0.0;
                    for (std::size_t c = 0; c < channels; ++c) e_dot += gr[c] * ev[idx * channels + c];
                    if (gi[1]) {
                        for (std::size_t c = 0; c < channels; ++c) (*gi[1])[idx * channels + c] += gr[c] * w;
                    }
                    if (gi[0]) (*gi[0])[idx] += delta[r] * (trans[k + 1] * e_dot - suffix_dot);
                    suffix_dot += w * e_dot;
                }
            }
        });
}

std::vector<double> render_values(const PointField& field, std::span<const Ray> rays, std::size_t channels,
                                  const RenderConfig& config, std::span<const double> background) {
    config.validate();
    std::vector<double> out(rays.size() * channels, 0.0);
    constexpr std::size_t kChunk = 256;
    parallel_chunks(rays.size(), kChunk, [&](std::size_t begin, std::size_t end) {
        const auto batch = rays.subspan(begin, end - begin);
        const RaySamples s = sample_rays(batch, config);
        std::vector<double> density, emission;
        field(s.points, density, emission);
        if (config.density_floor > 0.0) {
            for (auto& d : density) d += config.density_floor;
        }
        const auto part = composite_values(density, emission, s.samples, channels, s.delta, background);
        std::copy(part.begin(), part.end(), out.begin() + static_cast<std::ptrdiff_t>(begin * channels));
    });
    return out;
}

}  // namespace partaff
