// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <string>
#include <utility>
#include <vector>

namespace avloc::cli {

struct Series {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

struct Chart {
    std::string title, x_label, y_label;
    std::vector<Series> series;
    /// Fixed axis ranges; autoscaled from the data when lo == hi.
    double x_lo = 0, x_hi = 0, y_lo = 0, y_hi = 0;
};

/// A self-contained SVG line chart with axes, ticks and a legend.
std::string render_svg(const Chart& c);

}  // namespace avloc::cli
