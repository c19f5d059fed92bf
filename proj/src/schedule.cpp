#include "partaff/schedule.hpp"

#include <cmath>

#include "partaff/error.hpp"

namespace partaff {

NoiseSchedule NoiseSchedule::linear(std::uint32_t max_t, double beta_start, double beta_end) {
    if (max_t < 1) throw ValidationError("schedule needs T >= 1");
    NoiseSchedule s;
    s.max_t = max_t;
    s.alpha_bar.resize(max_t + 1);
    s.alpha_bar[0] = 1.0;
    for (std::uint32_t t = 1; t <= max_t; ++t) {
        const double frac = max_t == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(max_t - 1);
        const double beta = beta_start + (beta_end - beta_start) * frac;
        s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - beta);
    }
    s.validate();
    return s;
}

void NoiseSchedule::validate() const {
    if (alpha_bar.size() != static_cast<std::size_t>(max_t) + 1) throw ValidationError("alpha_bar must have T+1 entries");
    if (alpha_bar[0] != 1.0) throw ValidationError("alpha_bar[0] must be 1");
    for (std::size_t t = 0; t < alpha_bar.size(); ++t) {
        if (!(alpha_bar[t] > 0.0 && alpha_bar[t] <= 1.0)) throw ValidationError("alpha_bar must lie in (0, 1]");
        if (t > 0 && alpha_bar[t] > alpha_bar[t - 1]) throw ValidationError("alpha_bar must be non-increasing");
    }
}

double NoiseSchedule::alpha(std::uint32_t t) const {
    if (t > max_t) throw ValidationError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(max_t) + "]");
    return alpha_bar[t];
}

double NoiseSchedule::w(std::uint32_t t) const {
    return weight == TimestepWeight::Unit ? 1.0 : 1.0 - alpha(t);
}

Tensor add_noise(const Tensor& x, std::uint32_t t, const Tensor& epsilon, const NoiseSchedule& schedule) {
    if (x.shape() != epsilon.shape()) throw ShapeError("add_noise: x and epsilon shapes differ");
    const double ab = schedule.alpha(t);
    const double a = std::sqrt(ab);
    const double b = std::sqrt(1.0 - ab);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x[i] + b * epsilon[i];
    return Tensor(x.shape(), std::move(out));
}

std::uint32_t sample_timestep(Rng& rng, const NoiseSchedule& schedule, double range_fraction) {
    if (!(range_fraction > 0.0 && range_fraction <= 1.0)) throw ValidationError("range_fraction must lie in (0, 1]");
    const auto T = static_cast<double>(schedule.max_t);
    const auto lo = static_cast<std::int64_t>(std::ceil(0.02 * T));
    const auto hi_full = static_cast<std::int64_t>(std::floor(0.98 * T));
    const auto hi = lo + static_cast<std::int64_t>(std::floor(range_fraction * static_cast<double>(hi_full - lo)));
    return static_cast<std::uint32_t>(rng.uniform_int(lo, std::max(lo, hi)));
}

}  // namespace partaff
