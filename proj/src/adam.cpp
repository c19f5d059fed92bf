#include "partaff/adam.hpp"

#include <cmath>

#include "partaff/error.hpp"

namespace partaff {

void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state) {
    if (params.size() != grads.size()) {
        throw ShapeError("adam_step: " + std::to_string(params.size()) + " params but " +
                         std::to_string(grads.size()) + " gradients");
    }
    if (state.step == 0 && state.first_moment.empty()) {
        for (const auto& p : params) {
            state.first_moment.emplace_back(p.size(), 0.0);
            state.second_moment.emplace_back(p.size(), 0.0);
        }
    }
    if (state.first_moment.size() != params.size()) throw ShapeError("adam_step: state/parameter count mismatch");
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (params[k].shape() != grads[k].shape() || state.first_moment[k].size() != params[k].size()) {
            throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(k) + " " +
                             shape_str(params[k].shape()) + " vs grad " + shape_str(grads[k].shape()));
        }
    }

    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& m = state.first_moment[k];
        auto& v = state.second_moment[k];
        const double* g = grads[k].raw();
        std::vector<double> p = params[k].to_vector();
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
        }
        params[k] = Tensor(params[k].shape(), std::move(p));
    }
}

}  // namespace partaff
