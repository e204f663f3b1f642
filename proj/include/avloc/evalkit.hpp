// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "avloc/datasim.hpp"
#include "avloc/events.hpp"

namespace avloc::eval {

/// 0.1, 0.2, ..., 0.9
std::vector<double> default_thresholds();

struct ClassResult {
    int label = 0;
    int num_gt = 0;
    int tp = 0;
    int fp = 0;
    double ap = 0.0;
};

struct ThresholdResult {
    double threshold = 0.5;
    std::vector<ClassResult> classes;  ///< classes present in the ground truth, ascending
    double map = 0.0;
};

struct EvalReport {
    std::vector<ThresholdResult> thresholds;
    double average_map = 0.0;

    /// mAP at the grid point closest to `threshold`; throws if none is within 1e-9.
    double map_at(double threshold) const;
    nlohmann::json to_json() const;
    /// threshold,label,num_gt,tp,fp,ap with "mAP" rows per threshold and a final "average" row.
    std::string to_csv() const;
};

/// Per-class detection outcome at one threshold, in ranked order.
struct RankedMatches {
    std::vector<bool> is_tp;
    int num_gt = 0;
};

/// Ranks the class's predictions by confidence_order (video order breaks remaining ties) and
/// greedily matches each to the unmatched same-video GT of highest tIoU, if that tIoU >= threshold.
/// Throws std::invalid_argument for predictions whose id is missing from `gts`.
RankedMatches match_class(const std::vector<VideoPrediction>& preds, const std::vector<data::VideoAnnotation>& gts,
                          int label, double threshold);

/// All-point interpolated area under the precision-recall curve; 0 when num_gt == 0.
double ap_from_matches(const RankedMatches& m);

double average_precision(const std::vector<VideoPrediction>& preds, const std::vector<data::VideoAnnotation>& gts,
                         int label, double threshold);

/// Throws std::invalid_argument for an empty grid or a ground truth without events.
EvalReport mean_ap(const std::vector<VideoPrediction>& preds, const std::vector<data::VideoAnnotation>& gts,
                   const std::vector<double>& thresholds = default_thresholds());

}  // namespace avloc::eval
