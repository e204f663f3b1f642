// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#include "svg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace avloc::cli {

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 64, kRight = 150, kTop = 36, kBottom = 48;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string escape(const std::string& s) {
    std::string out;
    for (char ch : s) {
        switch (ch) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += ch;
        }
    }
    return out;
}

void autoscale(double& lo, double& hi, double data_lo, double data_hi) {
    if (lo != hi) return;
    if (!(data_lo <= data_hi)) data_lo = 0, data_hi = 1;
    if (data_lo == data_hi) data_lo -= 0.5, data_hi += 0.5;
    lo = data_lo;
    hi = data_hi;
}

}  // namespace

std::string render_svg(const Chart& c) {
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    for (const auto& s : c.series)
        for (auto [x, y] : s.points) {
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            xmin = std::min(xmin, x), xmax = std::max(xmax, x);
            ymin = std::min(ymin, y), ymax = std::max(ymax, y);
        }
    double x_lo = c.x_lo, x_hi = c.x_hi, y_lo = c.y_lo, y_hi = c.y_hi;
    autoscale(x_lo, x_hi, xmin, xmax);
    autoscale(y_lo, y_hi, std::min(ymin, 0.0), ymax);

    const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
    auto px = [&](double x) { return kLeft + (x - x_lo) / (x_hi - x_lo) * pw; };
    auto py = [&](double y) { return kTop + (1.0 - (y - y_lo) / (y_hi - y_lo)) * ph; };

    std::ostringstream os;
    os.precision(6);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << kWidth / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(c.title)
       << "</text>\n";
    os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = x_lo + (x_hi - x_lo) * i / 4.0, fy = y_lo + (y_hi - y_lo) * i / 4.0;
        os << "<line x1=\"" << px(fx) << "\" y1=\"" << kTop << "\" x2=\"" << px(fx) << "\" y2=\"" << kTop + ph
           << "\" stroke=\"#ddd\"/>\n";
        os << "<line x1=\"" << kLeft << "\" y1=\"" << py(fy) << "\" x2=\"" << kLeft + pw << "\" y2=\"" << py(fy)
           << "\" stroke=\"#ddd\"/>\n";
        os << "<text x=\"" << px(fx) << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\">" << fx
           << "</text>\n";
        os << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(fy) + 4 << "\" text-anchor=\"end\">" << fy << "</text>\n";
    }
    os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 10 << "\" text-anchor=\"middle\">"
       << escape(c.x_label) << "</text>\n";
    os << "<text transform=\"translate(16," << kTop + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
       << escape(c.y_label) << "</text>\n";

    for (std::size_t k = 0; k < c.series.size(); ++k) {
        const auto& s = c.series[k];
        const char* color = kColors[k % std::size(kColors)];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (auto [x, y] : s.points)
            if (std::isfinite(x) && std::isfinite(y)) os << px(x) << ',' << py(std::clamp(y, y_lo, y_hi)) << ' ';
        os << "\"/>\n";
        const double ly = kTop + 14 + 18 * double(k);
        os << "<line x1=\"" << kLeft + pw + 10 << "\" y1=\"" << ly - 4 << "\" x2=\"" << kLeft + pw + 30 << "\" y2=\""
           << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << kLeft + pw + 36 << "\" y=\"" << ly << "\">" << escape(s.name) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace avloc::cli
