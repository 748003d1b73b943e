#pragma once

#include <cmath>
#include <vector>

#include "irpatch/grid.hpp"

namespace irpatch {

struct SpotCenter {
    double x = 0;
    double y = 0;
    friend bool operator==(const SpotCenter&, const SpotCenter&) = default;
};

/// Gaussian spot patch: a flat background plus M isotropic spots sharing one
/// amplitude and one spread. Only the centers are optimized.
struct GaussianPatchParams {
    std::vector<SpotCenter> centers;
    double amplitude = 0.354;  ///< normalized intensity (10.62 C over a 30 C camera span)
    double sigma = 70.07;      ///< pixels, in patch coordinates
    double background = 0.30;  ///< normalized intensity of the bare board

    int num_spots() const noexcept { return static_cast<int>(centers.size()); }
    friend bool operator==(const GaussianPatchParams&, const GaussianPatchParams&) = default;
};

inline void validate(const GaussianPatchParams& p, int side) {
    if (side < 1) throw ContractError("patch side must be >= 1");
    if (!(p.sigma > 0)) throw ContractError("spot sigma must be > 0");
    if (!(p.amplitude >= 0)) throw ContractError("spot amplitude must be >= 0");
    if (!(p.background >= 0 && p.background <= 1)) throw ContractError("background must lie in [0,1]");
    for (const auto& c : p.centers) {
        if (!(c.x >= 0 && c.x <= side && c.y >= 0 && c.y <= side))
            throw ContractError("spot center (" + std::to_string(c.x) + ", " + std::to_string(c.y) +
                                ") lies outside [0, " + std::to_string(side) + "]^2");
    }
}

namespace detail {

// exp(-(x - c)^2 / (2 sigma^2)) for x = 0..side-1. A spot is the outer product of two of these.
inline void spot_profile(double center, double sigma, int side, std::vector<double>& out) {
    out.resize(static_cast<std::size_t>(side));
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int x = 0; x < side; ++x) {
        const double d = x - center;
        out[static_cast<std::size_t>(x)] = std::exp(-d * d * inv);
    }
}

}  // namespace detail

/// Adds `weight` times spot `c` to `acc` (side x side).
inline void accumulate_spot(Grid& acc, const SpotCenter& c, double amplitude, double sigma, double weight = 1.0) {
    const int side = acc.height();
    thread_local std::vector<double> gx, gy;
    detail::spot_profile(c.x, sigma, side, gx);
    detail::spot_profile(c.y, sigma, side, gy);
    const double s = amplitude * weight;
    for (int y = 0; y < side; ++y) {
        const double ry = s * gy[static_cast<std::size_t>(y)];
        auto row = acc.row(y);
        for (int x = 0; x < side; ++x) row[static_cast<std::size_t>(x)] += ry * gx[static_cast<std::size_t>(x)];
    }
}

/// Superposition before clamping: background + sum of spots.
inline Grid render_unclamped(const GaussianPatchParams& p, int side) {
    validate(p, side);
    Grid acc(side, side, p.background);
    for (const auto& c : p.centers) accumulate_spot(acc, c, p.amplitude, p.sigma);
    return acc;
}

inline Patch clamp_to_patch(Grid unclamped, PatchMode mode) {
    clamp_unit(unclamped);
    return Patch::from_grid(std::move(unclamped), mode);
}

/// Rasterizes the spot model at integer pixel coordinates and clamps to [0, 1].
inline Patch render_gaussian_patch(const GaussianPatchParams& p, int side) {
    return clamp_to_patch(render_unclamped(p, side), PatchMode::gaussian);
}

/// Chain rule through the renderer: given dL/dpixel (`upstream`), returns dL/d(center) for
/// every spot. Saturated pixels (clamped superposition) pass no gradient.
inline std::vector<SpotCenter> render_gradient(const GaussianPatchParams& p, int side, const Grid& upstream) {
    if (upstream.height() != side || upstream.width() != side)
        throw ContractError("upstream gradient shape does not match the rendered patch");
    const Grid raw = render_unclamped(p, side);
    Grid live(side, side);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            const double v = raw(y, x);
            live(y, x) = (v >= 0.0 && v <= 1.0) ? upstream(y, x) : 0.0;
        }

    std::vector<SpotCenter> grad(p.centers.size());
    std::vector<double> gx, gy;
    const double inv_var = 1.0 / (p.sigma * p.sigma);
    for (std::size_t i = 0; i < p.centers.size(); ++i) {
        const auto& c = p.centers[i];
        detail::spot_profile(c.x, p.sigma, side, gx);
        detail::spot_profile(c.y, p.sigma, side, gy);
        double sx = 0, sy = 0;
        for (int y = 0; y < side; ++y) {
            const double ry = gy[static_cast<std::size_t>(y)];
            const double dy = y - c.y;
            double row_x = 0, row_1 = 0;
            for (int x = 0; x < side; ++x) {
                const double w = live(y, x) * gx[static_cast<std::size_t>(x)];
                row_x += w * (x - c.x);
                row_1 += w;
            }
            sx += ry * row_x;
            sy += ry * dy * row_1;
        }
        grad[i] = {p.amplitude * sx * inv_var, p.amplitude * sy * inv_var};
    }
    return grad;
}

/// Isotropic total variation; differences against out-of-grid neighbours contribute 0.
inline double total_variation(const Grid& p) {
    const int h = p.height(), w = p.width();
    double sum = 0;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const double a = i + 1 < h ? p(i, j) - p(i + 1, j) : 0.0;
            const double b = j + 1 < w ? p(i, j) - p(i, j + 1) : 0.0;
            sum += std::sqrt(a * a + b * b);
        }
    return sum;
}

/// Gradient of total_variation. Terms with zero magnitude use the zero subgradient.
inline Grid total_variation_gradient(const Grid& p) {
    const int h = p.height(), w = p.width();
    Grid g(h, w);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const double a = i + 1 < h ? p(i, j) - p(i + 1, j) : 0.0;
            const double b = j + 1 < w ? p(i, j) - p(i, j + 1) : 0.0;
            const double n = std::sqrt(a * a + b * b);
            if (n == 0.0) continue;
            g(i, j) += (a + b) / n;
            if (i + 1 < h) g(i + 1, j) -= a / n;
            if (j + 1 < w) g(i, j + 1) -= b / n;
        }
    return g;
}

}  // namespace irpatch
