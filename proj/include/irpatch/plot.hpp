#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "irpatch/grid.hpp"
#include "irpatch/io.hpp"

namespace irpatch {

/// Rasterizes PR curves on a white canvas: recall on x, precision on y, one gray level per
/// series (darkest first). Returns a size x size image.
inline GrayImage plot_pr_curves(const std::vector<io::PRSeries>& series, int size = 400) {
    if (size < 64) throw ContractError("plot size must be >= 64");
    GrayImage img(size, size, 1.0);
    const int margin = size / 10;
    const int x0 = margin, x1 = size - margin, y0 = size - margin, y1 = margin;
    auto put = [&](int x, int y, double v) {
        if (x >= 0 && y >= 0 && x < size && y < size) img(y, x) = std::min(img(y, x), v);
    };
    auto line = [&](double ax, double ay, double bx, double by, double v) {
        const int steps = static_cast<int>(std::ceil(std::max(std::abs(bx - ax), std::abs(by - ay)))) + 1;
        for (int i = 0; i <= steps; ++i) {
            const double t = static_cast<double>(i) / steps;
            put(static_cast<int>(std::lround(ax + t * (bx - ax))), static_cast<int>(std::lround(ay + t * (by - ay))), v);
        }
    };
    auto px = [&](double r) { return x0 + r * (x1 - x0); };
    auto py = [&](double p) { return y0 + p * (y1 - y0); };

    line(x0, y0, x1, y0, 0.0);
    line(x0, y0, x0, y1, 0.0);
    for (int k = 1; k <= 10; ++k) {
        line(px(k / 10.0), y0, px(k / 10.0), y0 + 4, 0.0);
        line(x0, py(k / 10.0), x0 - 4, py(k / 10.0), 0.0);
    }
    for (std::size_t s = 0; s < series.size(); ++s) {
        const double shade = series.size() > 1 ? 0.7 * static_cast<double>(s) / static_cast<double>(series.size() - 1) : 0.0;
        double r = 0, p = series[s].points.empty() ? 0.0 : series[s].points.front().precision;
        for (const auto& pt : series[s].points) {
            line(px(r), py(p), px(pt.recall), py(pt.precision), shade);
            r = pt.recall, p = pt.precision;
        }
    }
    return img;
}

}  // namespace irpatch
