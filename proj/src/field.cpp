#include "partaff/field.hpp"

#include <cmath>
#include <numbers>

#include "partaff/error.hpp"
#include "partaff/rng.hpp"

namespace partaff {

std::size_t MlpField::parameter_count() const {
    std::size_t n = 0;
    for (const auto& w : weights) n += w.size();
    return n;
}

void MlpField::validate() const {
    if (outputs < 1) throw ValidationError("field needs at least a density output");
    if (weights.size() != 4) throw ValidationError("field must hold 4 weight tensors");
    const Shape expect[4] = {{input_dim(), hidden}, {hidden}, {hidden, outputs}, {outputs}};
    for (int k = 0; k < 4; ++k) {
        if (weights[k].shape() != expect[k]) {
            throw ValidationError("field weight " + std::to_string(k) + " has shape " +
                                  shape_str(weights[k].shape()) + ", expected " + shape_str(expect[k]));
        }
        if (!weights[k].all_finite()) throw ValidationError("field weights must be finite");
    }
}

MlpField MlpField::init(std::size_t frequencies, std::size_t hidden, std::size_t outputs, std::uint64_t seed,
                        bool zero_final) {
    MlpField f;
    f.frequencies = frequencies;
    f.hidden = hidden;
    f.outputs = outputs;
    Rng rng(seed);
    auto glorot = [&](std::size_t in, std::size_t out) {
        const double a = std::sqrt(6.0 / static_cast<double>(in + out));
        std::vector<double> w(in * out);
        for (auto& x : w) x = rng.uniform(-a, a);
        return Tensor({in, out}, std::move(w));
    };
    f.weights.push_back(glorot(f.input_dim(), hidden));
    f.weights.push_back(Tensor::zeros({hidden}));
    f.weights.push_back(zero_final ? Tensor::zeros({hidden, outputs}) : glorot(hidden, outputs));
    f.weights.push_back(Tensor::zeros({outputs}));
    return f;
}

Tensor encode_points(std::span<const double> xyz, std::size_t frequencies) {
    if (xyz.size() % 3 != 0) throw ShapeError("encode_points: coordinate count is not a multiple of 3");
    const std::size_t n = xyz.size() / 3;
    const std::size_t dim = 3 + 6 * frequencies;
    std::vector<double> out(n * dim);
    for (std::size_t p = 0; p < n; ++p) {
        double* row = out.data() + p * dim;
        for (int a = 0; a < 3; ++a) {
            const double x = xyz[p * 3 + a];
            if (!std::isfinite(x)) throw DomainError("encode_points: non-finite coordinate");
            row[a] = x;
        }
        double freq = std::numbers::pi;
        for (std::size_t k = 0; k < frequencies; ++k, freq *= 2.0) {
            for (int a = 0; a < 3; ++a) {
                const double arg = freq * xyz[p * 3 + a];
                row[3 + 6 * k + a] = std::sin(arg);
                row[3 + 6 * k + 3 + a] = std::cos(arg);
            }
        }
    }
    return Tensor({n, dim}, std::move(out));
}

FieldOutputs eval_field(std::span<const Var> weights, const Tensor& encoded, double density_floor) {
    if (weights.size() != 4) throw ValidationError("eval_field: expected 4 weight tensors");
    Tape& tape = *weights[0].tape();
    const Var x = tape.constant(encoded);
    const Var h = dense(x, weights[0], weights[1], true);
    const Var out = dense(h, weights[2], weights[3]);
    const std::size_t outputs = out.shape()[1];
    Var density = softplus(slice_cols(out, 0, 1));
    if (density_floor > 0.0) density = add(density, tape.constant(Tensor::scalar(density_floor)));
    Var emission = outputs > 1 ? sigmoid(slice_cols(out, 1, outputs)) : Var{};
    return {density, emission};
}

void eval_field_values(const MlpField& field, std::span<const double> xyz, std::vector<double>& density,
                       std::vector<double>& emission) {
    Tape tape;
    std::vector<Var> w;
    for (const auto& t : field.weights) w.push_back(tape.constant(t));
    const auto out = eval_field(w, encode_points(xyz, field.frequencies));
    density = out.density.value().to_vector();
    emission = out.emission.valid() ? out.emission.value().to_vector() : std::vector<double>{};
}

}  // namespace partaff
