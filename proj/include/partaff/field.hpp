#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "partaff/autodiff.hpp"
#include "partaff/camera.hpp"

namespace partaff {

/// One-hidden-layer MLP over positionally encoded 3D points. Output column
/// 0 is a density logit, the remaining columns are emission logits.
///
/// Weights are stored in declaration order: W1 [in, hidden], b1 [hidden],
/// W2 [hidden, outputs], b2 [outputs].
struct MlpField {
    std::size_t frequencies = 6;
    std::size_t hidden = 64;
    std::size_t outputs = 1;
    std::vector<Tensor> weights;

    std::size_t input_dim() const { return 3 + 6 * frequencies; }
    std::size_t emission_channels() const { return outputs - 1; }
    std::size_t parameter_count() const;
    void validate() const;

    /// Glorot-uniform weights, zero biases. With `zero_final` the output
    /// layer starts at zero.
    static MlpField init(std::size_t frequencies, std::size_t hidden, std::size_t outputs, std::uint64_t seed,
                         bool zero_final = false);
};

/// [x, sin(2^k pi x), cos(2^k pi x) for k < frequencies] per point; points
/// are packed xyz triples.
Tensor encode_points(std::span<const double> xyz, std::size_t frequencies);

struct FieldOutputs {
    Var density;   ///< [N, 1], softplus of the density logit
    Var emission;  ///< [N, C], sigmoid of the emission logits
};

/// Records the MLP forward pass for pre-encoded points on `weights`' tape.
FieldOutputs eval_field(std::span<const Var> weights, const Tensor& encoded, double density_floor = 0.0);

/// Forward pass without gradients: density and emissions of each point.
void eval_field_values(const MlpField& field, std::span<const double> xyz, std::vector<double>& density,
                       std::vector<double>& emission);

}  // namespace partaff
