#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "partaff/gradcheck.hpp"

namespace partaff {

struct GradCheckCase {
    std::string name;
    GradCheckReport report;
};

/// Finite-difference checks of every primitive, the compositing op, the
/// affinity-field loss and the asset render, on seeded random inputs.
std::vector<GradCheckCase> run_gradcheck_suite(std::uint64_t seed = 0, const GradCheckOptions& options = {});

}  // namespace partaff
