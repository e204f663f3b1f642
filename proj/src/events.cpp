// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#include "avloc/events.hpp"

#include <algorithm>

namespace avloc {

double tiou(double a_start, double a_end, double b_start, double b_end) {
    if (!(a_end > a_start) || !(b_end > b_start)) return 0.0;
    const double inter = std::min(a_end, b_end) - std::max(a_start, b_start);
    if (inter <= 0.0) return 0.0;
    const double uni = (a_end - a_start) + (b_end - b_start) - inter;
    return inter / uni;
}

bool confidence_order(const LocalizedEvent& a, const LocalizedEvent& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.start != b.start) return a.start < b.start;
    return a.label < b.label;
}

}  // namespace avloc
