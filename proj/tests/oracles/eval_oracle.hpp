// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <vector>

#include "avloc/datasim.hpp"
#include "avloc/events.hpp"

namespace avloc::test::oracle {

/// Quadratic-time AP: selection-sort ranking, full rescans for every match and a
/// brute-force precision envelope.
double reference_ap(const std::vector<VideoPrediction>& preds, const std::vector<data::VideoAnnotation>& gts,
                    int label, double threshold);

/// Mean of reference_ap over GT classes, then over thresholds.
double reference_average_map(const std::vector<VideoPrediction>& preds,
                             const std::vector<data::VideoAnnotation>& gts, const std::vector<double>& thresholds);

}  // namespace avloc::test::oracle
