// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#include "avloc/numkern/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace avloc::nk {

bool FiniteDifferenceResult::all_verified() const {
    return std::all_of(unverifiable.begin(), unverifiable.end(), [](const auto& u) { return u.empty(); });
}

FiniteDifferenceResult finite_difference_gradient(const std::function<double()>& f,
                                                  std::span<Parameter* const> params, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("finite_difference_gradient: eps must be positive");
    FiniteDifferenceResult out;
    for (Parameter* p : params) {
        Matrix est(p->value.rows(), p->value.cols());
        std::vector<std::size_t> bad;
        for (std::size_t k = 0; k < p->value.size(); ++k) {
            const double orig = p->value[k];
            p->value[k] = orig + eps;
            const double fp = f();
            p->value[k] = orig - eps;
            const double fm = f();
            p->value[k] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                bad.push_back(k);
                continue;
            }
            est[k] = (fp - fm) / (2.0 * eps);
        }
        out.estimate.push_back(std::move(est));
        out.unverifiable.push_back(std::move(bad));
    }
    return out;
}

double relative_error(const Matrix& analytic, const Matrix& numeric) {
    require_shape(analytic.same_shape(numeric), "relative_error: shape mismatch");
    double denom = analytic.frobenius_norm() + numeric.frobenius_norm();
    if (denom == 0.0) return 0.0;
    return (analytic - numeric).frobenius_norm() / denom;
}

bool GradientCheckReport::passed(double tolerance) const {
    return std::all_of(entries.begin(), entries.end(), [tolerance](const GradientCheckEntry& e) {
        return e.unverifiable == 0 && e.relative_error <= tolerance;
    });
}

GradientCheckReport check_gradients(const std::function<Var(Tape&)>& build,
                                    std::span<Parameter* const> params, double eps) {
    for (Parameter* p : params) p->zero_grad();
    {
        Tape tape;
        tape.backward(build(tape));
    }
    auto f = [&build]() {
        Tape tape;
        tape.set_grad_enabled(false);
        return build(tape).item();
    };
    FiniteDifferenceResult fd = finite_difference_gradient(f, params, eps);

    GradientCheckReport report;
    for (std::size_t i = 0; i < params.size(); ++i) {
        GradientCheckEntry e;
        e.name = params[i]->name;
        e.unverifiable = fd.unverifiable[i].size();
        e.analytic_norm = params[i]->grad.frobenius_norm();
        e.relative_error = relative_error(params[i]->grad, fd.estimate[i]);
        report.max_relative_error = std::max(report.max_relative_error, e.relative_error);
        report.entries.push_back(std::move(e));
    }
    return report;
}

}  // namespace avloc::nk
