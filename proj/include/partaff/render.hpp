#pragma once

#include <functional>
#include <span>
#include <vector>

#include "partaff/autodiff.hpp"
#include "partaff/camera.hpp"
#include "partaff/rng.hpp"

namespace partaff {

struct RenderConfig {
    std::size_t samples_per_ray = 128;
    std::size_t resolution = 64;
    /// Overrides the ray's near/far when both are non-negative.
    double near = -1.0;
    double far = -1.0;
    /// Lower bound added to every density activation.
    double density_floor = 0.0;

    void validate() const;
};

/// Sample positions along a batch of rays. Every ray is split into
/// `samples` equal strata; samples sit at stratum midpoints or, with a
/// jitter stream, uniformly inside each stratum. `delta[r]` is the stratum
/// length of ray r.
struct RaySamples {
    std::size_t rays = 0;
    std::size_t samples = 0;
    std::vector<double> points;  ///< rays * samples xyz triples
    std::vector<double> delta;   ///< per ray
};

RaySamples sample_rays(std::span<const Ray> rays, const RenderConfig& config, Rng* jitter = nullptr);

/// Emission-absorption compositing of one batch: for each ray,
/// out_c = sum_i T_i alpha_i e_ic + T_end * background_c with
/// alpha_i = 1 - exp(-sigma_i delta) and T_i = prod_{j<i} (1 - alpha_j).
/// sigma is [rays * samples], emission [rays * samples, channels].
std::vector<double> composite_values(std::span<const double> sigma, std::span<const double> emission,
                                     std::size_t samples, std::size_t channels, std::span<const double> delta,
                                     std::span<const double> background = {});

/// Tape primitive for `composite_values`; returns [rays, channels].
Var composite(Var sigma, Var emission, std::size_t samples, std::vector<double> delta,
              std::vector<double> background = {});

/// Point field for forward-only rendering: fills per-point density and
/// per-point emissions (channels values per point).
using PointField =
    std::function<void(std::span<const double> xyz, std::vector<double>& density, std::vector<double>& emission)>;

/// Forward render of a ray batch, chunked over rays. Returns [rays, channels].
std::vector<double> render_values(const PointField& field, std::span<const Ray> rays, std::size_t channels,
                                  const RenderConfig& config, std::span<const double> background = {});

}  // namespace partaff
