#pragma once

#include <vector>

#include "partaff/tensor.hpp"

namespace partaff {

struct AdamState {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long step = 0;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;

    AdamState() = default;
    explicit AdamState(double lr) : learning_rate(lr) {}
};

/// One bias-corrected Adam update applied in place to `params`. Moment
/// buffers are allocated on the first call and must keep matching shapes.
void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state);

}  // namespace partaff
