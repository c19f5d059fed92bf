#pragma once

#include <span>
#include <vector>

#include "partaff/extraction.hpp"
#include "partaff/tensor.hpp"

namespace partaff {

struct ModulationConfig {
    double alpha_cross = 0.8;
    double alpha_self = 0.9;
    /// Affinities are clamped to [floor, 1] before taking logs.
    double floor = 1e-4;

    void validate() const;
};

/// Bilinear resample (pixel-centre convention, edge clamped) of a
/// src_h x src_w grid to h x w, then clamp to [floor, 1]. `target_hw` must
/// equal h * w.
std::vector<double> resample_affinity(std::span<const double> grid, std::size_t src_h, std::size_t src_w,
                                      std::size_t target_hw, std::size_t h, std::size_t w, double floor);

struct ModulatedAttention {
    Tensor scores;     ///< modulated pre-softmax scores
    Tensor attention;  ///< row-wise softmax of `scores`
};

/// Row-wise softmax over the last axis.
Tensor softmax_rows(const Tensor& scores);

/// Adds alpha * log(m_p[j]) to every column i in I_p of row j, for all
/// parts, then applies one softmax over tokens. Scores are [hw, n].
ModulatedAttention modulate_cross(const Tensor& scores, std::span<const std::vector<double>> affinity,
                                  std::span<const PartSpec> parts, double alpha);

/// Adds alpha * log(m_p m_p^T) for every part to the [hw, hw] scores,
/// using log(m_j m_k) = log m_j + log m_k, then one softmax over keys.
ModulatedAttention modulate_self(const Tensor& scores, std::span<const std::vector<double>> affinity, double alpha);

}  // namespace partaff
