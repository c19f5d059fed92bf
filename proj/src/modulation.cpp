#include "partaff/modulation.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "partaff/error.hpp"

namespace partaff {

void ModulationConfig::validate() const {
    if (!(alpha_cross >= 0.0) || !(alpha_self >= 0.0)) throw ValidationError("modulation alphas must be >= 0");
    if (!(floor > 0.0 && floor < 1.0)) throw ValidationError("affinity floor must lie in (0, 1)");
}

std::vector<double> resample_affinity(std::span<const double> grid, std::size_t src_h, std::size_t src_w,
                                      std::size_t target_hw, std::size_t h, std::size_t w, double floor) {
    if (h * w != target_hw || h == 0 || w == 0) {
        throw ValidationError("target size " + std::to_string(target_hw) + " is not " + std::to_string(h) + "x" +
                              std::to_string(w));
    }
    if (grid.size() != src_h * src_w || src_h == 0 || src_w == 0) {
        throw ShapeError("resample_affinity: source grid size mismatch");
    }
    auto coord = [](std::size_t dst, std::size_t src_n, std::size_t dst_n, std::size_t& i0, std::size_t& i1,
                    double& frac) {
        const double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(src_n) / static_cast<double>(dst_n) - 0.5;
        const double c = std::clamp(s, 0.0, static_cast<double>(src_n - 1));
        i0 = static_cast<std::size_t>(std::floor(c));
        i1 = std::min(i0 + 1, src_n - 1);
        frac = c - static_cast<double>(i0);
    };
    std::vector<double> out(target_hw);
    for (std::size_t y = 0; y < h; ++y) {
        std::size_t y0, y1;
        double fy;
        coord(y, src_h, h, y0, y1, fy);
        for (std::size_t x = 0; x < w; ++x) {
            std::size_t x0, x1;
            double fx;
            coord(x, src_w, w, x0, x1, fx);
            const double top = grid[y0 * src_w + x0] * (1.0 - fx) + grid[y0 * src_w + x1] * fx;
            const double bottom = grid[y1 * src_w + x0] * (1.0 - fx) + grid[y1 * src_w + x1] * fx;
            out[y * w + x] = std::clamp(top * (1.0 - fy) + bottom * fy, floor, 1.0);
        }
    }
    return out;
}

Tensor softmax_rows(const Tensor& scores) {
    if (scores.rank() == 0) throw ShapeError("softmax_rows needs rank >= 1");
    const std::size_t cols = scores.shape().back();
    const std::size_t rows = cols ? scores.size() / cols : 0;
    std::vector<double> out(scores.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = scores.raw() + r * cols;
        double* y = out.data() + r * cols;
        const double mx = *std::max_element(x, x + cols);
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) z += (y[c] = std::exp(x[c] - mx));
        for (std::size_t c = 0; c < cols; ++c) y[c] /= z;
    }
    return Tensor(scores.shape(), std::move(out));
}

namespace {

std::vector<double> log_affinity(const std::vector<double>& m, std::size_t hw) {
    if (m.size() != hw) throw ShapeError("affinity vector length " + std::to_string(m.size()) + " != " + std::to_string(hw));
    std::vector<double> out(hw);
    for (std::size_t j = 0; j < hw; ++j) {
        if (!(m[j] > 0.0) || !std::isfinite(m[j])) {
            throw DomainError("affinity entries must be positive and finite; clamp to the floor before modulating");
        }
        out[j] = std::log(m[j]);
    }
    return out;
}

}  // namespace

ModulatedAttention modulate_cross(const Tensor& scores, std::span<const std::vector<double>> affinity,
                                  std::span<const PartSpec> parts, double alpha) {
    if (scores.rank() != 2) throw ShapeError("cross scores must be [hw, n]");
    if (affinity.size() != parts.size()) throw ShapeError("one affinity vector per part is required");
    const std::size_t hw = scores.dim(0);
    const std::size_t n = scores.dim(1);
    std::set<std::size_t> used;
    for (const auto& p : parts) {
        p.validate(n);
        for (auto i : p.indices) {
            if (!used.insert(i).second) {
                throw ValidationError("token " + std::to_string(i) + " is claimed by more than one part");
            }
        }
    }
    std::vector<double> s = scores.to_vector();
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto logm = log_affinity(affinity[k], hw);
        if (alpha == 0.0) continue;
        for (std::size_t j = 0; j < hw; ++j) {
            const double add = alpha * logm[j];
            for (auto i : parts[k].indices) s[j * n + i] += add;
        }
    }
    Tensor modulated(scores.shape(), std::move(s));
    Tensor attention = softmax_rows(modulated);
    return {std::move(modulated), std::move(attention)};
}

ModulatedAttention modulate_self(const Tensor& scores, std::span<const std::vector<double>> affinity, double alpha) {
    if (scores.rank() != 2 || scores.dim(0) != scores.dim(1)) throw ShapeError("self scores must be [hw, hw]");
    const std::size_t hw = scores.dim(0);
    std::vector<double> s = scores.to_vector();
    for (const auto& m : affinity) {
        const auto logm = log_affinity(m, hw);
        if (alpha == 0.0) continue;
        for (std::size_t j = 0; j < hw; ++j) {
            for (std::size_t k = 0; k < hw; ++k) s[j * hw + k] += alpha * (logm[j] + logm[k]);
        }
    }
    Tensor modulated(scores.shape(), std::move(s));
    Tensor attention = softmax_rows(modulated);
    return {std::move(modulated), std::move(attention)};
}

}  // namespace partaff
