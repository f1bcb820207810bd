#include "nest/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nest {

namespace {

double evaluate(ParamStore& store, const Objective& f) {
    Tape tape(false);
    const double v = f(tape, store).value()[0];
    if (!std::isfinite(v)) throw std::domain_error("gradient_check: objective is not finite");
    return v;
}

}  // namespace

GradCheckReport gradient_check(ParamStore& store, const Objective& f, double eps, double tol) {
    if (!(eps >= 1e-6 && eps <= 1e-4)) throw std::invalid_argument("gradient_check: eps must lie in [1e-6, 1e-4]");

    store.zero_grad();
    {
        Tape tape(true);
        Var loss = f(tape, store);
        if (!std::isfinite(loss.value()[0])) throw std::domain_error("gradient_check: objective is not finite");
        tape.backward(loss);
    }

    GradCheckReport report;
    report.tolerance = tol;
    for (auto& p : store) {
        GradCheckEntry entry{p.name, p.value.size(), 0.0, 0.0};
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double saved = p.value[i];
            p.value[i] = saved + eps;
            const double up = evaluate(store, f);
            p.value[i] = saved - eps;
            const double down = evaluate(store, f);
            p.value[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double analytic = p.grad[i];
            const double abs_err = std::abs(analytic - numeric);
            const double rel_err = abs_err / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
            entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
            entry.max_rel_error = std::max(entry.max_rel_error, rel_err);
        }
        report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
        report.entries.push_back(std::move(entry));
    }
    report.passed = report.max_rel_error < tol;
    return report;
}

}  // namespace nest
