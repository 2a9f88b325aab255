// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "side/common.hpp"

namespace side::svg {

struct Series {
    std::string name;
    std::vector<std::pair<double, double>> pts;
};

inline std::string fmt_tick(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

/// Standalone SVG line plot: auto-scaled axes, tick labels, one polyline with
/// point markers per series, legend in the top-right corner.
inline std::string line_plot(const std::string& title, const std::string& xlabel,
                             const std::string& ylabel, const std::vector<Series>& series,
                             int width = 640, int height = 420) {
    check(!series.empty(), "line_plot: at least one series required");
    static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf"};
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series)
        for (auto [x, y] : s.pts) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    check(xmin <= xmax && ymin <= ymax, "line_plot: empty series");
    if (xmax == xmin) {
        xmin -= 0.5;
        xmax += 0.5;
    }
    if (ymax == ymin) {
        ymin -= 0.5;
        ymax += 0.5;
    }
    double ypad = 0.08 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;
    const double ml = 64, mr = 20, mt = 40, mb = 48;
    const double pw = width - ml - mr, ph = height - mt - mb;
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) { return mt + ph - (y - ymin) / (ymax - ymin) * ph; };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
       << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\" "
          "font-family=\"sans-serif\">"
       << title << "</text>\n";

    // axes and ticks
    os << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"#444\"/>\n";
    const int nticks = 5;
    for (int i = 0; i <= nticks; ++i) {
        double tx = xmin + (xmax - xmin) * i / nticks;
        double ty = ymin + (ymax - ymin) * i / nticks;
        os << "<line x1=\"" << px(tx) << "\" y1=\"" << mt + ph << "\" x2=\"" << px(tx)
           << "\" y2=\"" << mt + ph + 5 << "\" stroke=\"#444\"/>\n";
        os << "<text x=\"" << px(tx) << "\" y=\"" << mt + ph + 20
           << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">"
           << fmt_tick(tx) << "</text>\n";
        os << "<line x1=\"" << ml - 5 << "\" y1=\"" << py(ty) << "\" x2=\"" << ml << "\" y2=\""
           << py(ty) << "\" stroke=\"#444\"/>\n";
        os << "<text x=\"" << ml - 8 << "\" y=\"" << py(ty) + 4
           << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" << fmt_tick(ty)
           << "</text>\n";
    }
    os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << height - 10
       << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\">" << xlabel
       << "</text>\n";
    os << "<text x=\"16\" y=\"" << mt + ph / 2
       << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\" "
          "transform=\"rotate(-90 16 "
       << mt + ph / 2 << ")\">" << ylabel << "</text>\n";

    for (std::size_t si = 0; si < series.size(); ++si) {
        const char* color = kColors[si % 7];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
        for (auto [x, y] : series[si].pts) os << px(x) << ',' << py(y) << ' ';
        os << "\"/>\n";
        for (auto [x, y] : series[si].pts)
            os << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3\" fill=\"" << color
               << "\"/>\n";
        os << "<rect x=\"" << ml + pw - 150 << "\" y=\"" << mt + 10 + 18 * double(si)
           << "\" width=\"12\" height=\"12\" fill=\"" << color << "\"/>\n";
        os << "<text x=\"" << ml + pw - 132 << "\" y=\"" << mt + 20 + 18 * double(si)
           << "\" font-size=\"12\" font-family=\"sans-serif\">" << series[si].name << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace side::svg
