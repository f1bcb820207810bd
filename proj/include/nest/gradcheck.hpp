#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nest/autodiff.hpp"

namespace nest {

struct GradCheckEntry {
    std::string name;
    std::size_t count = 0;
    double max_abs_error = 0.0;
    double max_rel_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

/// Builds a scalar objective on the given tape, binding parameters through
/// Tape::param. Must be deterministic.
using Objective = std::function<Var(Tape&, ParamStore&)>;

/// Compares the analytic gradient of `f` with central finite differences
/// (f(p + eps) - f(p - eps)) / (2 eps) for every parameter entry.
///
/// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, 1e-6);
/// the floor keeps entries whose true gradient is zero from dividing by noise.
/// Parameters are restored bitwise on return.
GradCheckReport gradient_check(ParamStore& store, const Objective& f, double eps = 1e-6, double tol = 1e-4);

}  // namespace nest
