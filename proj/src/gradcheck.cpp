#include "partaff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "partaff/error.hpp"

namespace partaff {

namespace {

struct Eval {
    double value;
    std::uint64_t kinks;
};

Eval evaluate(const ScalarFn& fn, const std::vector<Tensor>& params) {
    Tape tape;
    tape.set_kink_tracking(true);
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const auto& p : params) vars.push_back(tape.parameter(p));
    Var loss = fn(tape, vars);
    return {loss.value().item(), tape.kink_signature()};
}

Tensor with_entry(const Tensor& t, std::size_t i, double v) {
    auto data = t.to_vector();
    data[i] = v;
    return Tensor(t.shape(), std::move(data));
}

}  // namespace

GradCheckReport finite_diff_check(const ScalarFn& fn, const std::vector<Tensor>& params,
                                  const GradCheckOptions& options) {
    std::vector<Tensor> grads;
    double base = 0.0;
    std::uint64_t base_kinks = 0;
    {
        Tape tape;
        tape.set_kink_tracking(true);
        std::vector<Var> vars;
        for (const auto& p : params) vars.push_back(tape.parameter(p));
        Var loss = fn(tape, vars);
        base = loss.value().item();
        base_kinks = tape.kink_signature();
        grads = tape.backward(loss);
    }
    const Eval again = evaluate(fn, params);
    if (std::memcmp(&again.value, &base, sizeof(double)) != 0 || again.kinks != base_kinks) {
        throw ValidationError("finite_diff_check: function is not deterministic");
    }

    GradCheckReport report;
    std::vector<Tensor> work = params;
    for (std::size_t k = 0; k < params.size(); ++k) {
        const std::size_t n = params[k].size();
        const std::size_t stride =
            (options.max_coords_per_param == 0 || n <= options.max_coords_per_param)
                ? 1
                : (n + options.max_coords_per_param - 1) / options.max_coords_per_param;
        for (std::size_t i = 0; i < n; i += stride) {
            const double x = params[k][i];
            work[k] = with_entry(params[k], i, x + options.step);
            const Eval plus = evaluate(fn, work);
            work[k] = with_entry(params[k], i, x - options.step);
            const Eval minus = evaluate(fn, work);
            work[k] = params[k];
            if (plus.kinks != base_kinks || minus.kinks != base_kinks) {
                ++report.skipped_kinks;
                continue;
            }
            const double fd = (plus.value - minus.value) / (2.0 * options.step);
            const double tg = grads[k][i];
            const double denom = std::max({std::abs(fd), std::abs(tg), options.floor});
            const double rel = std::abs(fd - tg) / denom;
            ++report.checked;
            if (rel > report.max_rel_error || report.checked == 1) {
                report.max_rel_error = std::max(report.max_rel_error, rel);
                if (rel >= report.max_rel_error) {
                    report.worst_param = k;
                    report.worst_index = i;
                    report.worst_tape = tg;
                    report.worst_fd = fd;
                }
            }
        }
    }
    report.passed = report.max_rel_error < options.tolerance;
    return report;
}

}  // namespace partaff
