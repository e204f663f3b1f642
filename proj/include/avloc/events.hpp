// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <string>
#include <vector>

namespace avloc {

/// A decoded prediction in segment-index units.
struct LocalizedEvent {
    double start = 0.0;
    double end = 0.0;
    int label = 0;
    double confidence = 0.0;

    bool operator==(const LocalizedEvent&) const = default;
};

struct VideoPrediction {
    std::string id;
    std::vector<LocalizedEvent> events;

    bool operator==(const VideoPrediction&) const = default;
};

/// |a ∩ b| / |a ∪ b|; 0 for disjoint or zero-length intervals.
double tiou(double a_start, double a_end, double b_start, double b_end);

/// Descending confidence, then earlier start, then lower label.
bool confidence_order(const LocalizedEvent& a, const LocalizedEvent& b);

}  // namespace avloc
