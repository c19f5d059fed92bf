#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "partaff/autodiff.hpp"

namespace partaff {

/// Builds a scalar loss on a fresh tape from parameter handles.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-6;
    /// Relative error is |a - b| / max(|a|, |b|, floor).
    double floor = 1e-3;
    /// 0 checks every coordinate; otherwise an evenly strided subset.
    std::size_t max_coords_per_param = 0;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    /// Coordinates whose perturbation crossed a kink (e.g. relu at 0).
    std::size_t skipped_kinks = 0;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    double worst_tape = 0.0;
    double worst_fd = 0.0;
    bool passed = false;
};

/// Compares tape gradients of `fn` against central differences. Throws
/// ValidationError when two evaluations at the same point disagree.
GradCheckReport finite_diff_check(const ScalarFn& fn, const std::vector<Tensor>& params,
                                  const GradCheckOptions& options = {});

}  // namespace partaff
