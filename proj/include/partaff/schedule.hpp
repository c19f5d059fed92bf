#pragma once

#include <cstdint>
#include <vector>

#include "partaff/rng.hpp"
#include "partaff/tensor.hpp"

namespace partaff {

enum class TimestepWeight { Unit, OneMinusAlphaBar };

/// Cumulative signal levels alpha_bar[0..T], alpha_bar[0] = 1.
struct NoiseSchedule {
    std::uint32_t max_t = 1000;
    std::vector<double> alpha_bar;
    TimestepWeight weight = TimestepWeight::Unit;

    /// beta_s linearly spaced from beta_start to beta_end for s = 1..T.
    static NoiseSchedule linear(std::uint32_t max_t = 1000, double beta_start = 0.00085, double beta_end = 0.012);

    void validate() const;
    double alpha(std::uint32_t t) const;
    double w(std::uint32_t t) const;
};

/// x_t = sqrt(alpha_bar_t) x + sqrt(1 - alpha_bar_t) eps.
Tensor add_noise(const Tensor& x, std::uint32_t t, const Tensor& epsilon, const NoiseSchedule& schedule);

/// Uniform integer in [ceil(0.02 T), ceil(0.02 T) + floor(f * (floor(0.98 T) - ceil(0.02 T)))].
std::uint32_t sample_timestep(Rng& rng, const NoiseSchedule& schedule, double range_fraction = 1.0);

}  // namespace partaff
