// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "avloc/numkern/tape.hpp"

namespace avloc::nk {

/// Central-difference gradient estimate for a set of parameters.
struct FiniteDifferenceResult {
    /// One estimate per parameter, same shape as its value.
    std::vector<Matrix> estimate;
    /// Flat entry indices (per parameter) where f was non-finite at a perturbed point.
    std::vector<std::vector<std::size_t>> unverifiable;

    bool all_verified() const;
};

/// Estimates df/dtheta by (f(theta + eps) - f(theta - eps)) / (2 eps) for every entry.
/// Parameter values are restored before returning.
FiniteDifferenceResult finite_difference_gradient(const std::function<double()>& f,
                                                  std::span<Parameter* const> params, double eps = 1e-6);

/// ||a - n|| / (||a|| + ||n||), or 0 when both vanish.
double relative_error(const Matrix& analytic, const Matrix& numeric);

struct GradientCheckEntry {
    std::string name;
    double relative_error = 0.0;
    double analytic_norm = 0.0;
    std::size_t unverifiable = 0;
};

struct GradientCheckReport {
    std::vector<GradientCheckEntry> entries;
    double max_relative_error = 0.0;
    bool passed(double tolerance) const;
};

/// Compares the tape gradient of `build` against finite differences for every parameter.
GradientCheckReport check_gradients(const std::function<Var(Tape&)>& build,
                                    std::span<Parameter* const> params, double eps = 1e-6);

}  // namespace avloc::nk
