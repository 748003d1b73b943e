#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "irpatch/errors.hpp"

namespace irpatch {

struct ProfileSample {
    double position = 0;     ///< px along a section through the spot center
    double temperature = 0;  ///< deg C
};

struct BulbFit {
    double amplitude = 0;  ///< deg C
    double center = 0;     ///< px
    double sigma = 0;      ///< px
    double baseline = 0;   ///< deg C
    double rmse = 0;       ///< deg C
    bool converged = true;
};

struct FitOptions {
    int grid_centers = 41;
    int grid_sigmas = 41;
    int max_iterations = 20000;
    double tolerance = 1e-12;  ///< final step, relative to the position range
};

namespace detail {

struct LinearFit {
    double amplitude = 0, baseline = 0, sse = std::numeric_limits<double>::infinity();
};

/// Least squares for (A, baseline) with the Gaussian shape fixed.
inline LinearFit solve_linear(std::span<const ProfileSample> s, double c, double sigma) {
    const double n = static_cast<double>(s.size());
    double sg = 0, sgg = 0, st = 0, sgt = 0;
    for (const auto& p : s) {
        const double d = p.position - c;
        const double g = std::exp(-d * d / (2 * sigma * sigma));
        sg += g, sgg += g * g, st += p.temperature, sgt += g * p.temperature;
    }
    const double det = n * sgg - sg * sg;
    LinearFit f;
    if (!(det > 1e-12 * n * n)) return f;
    f.amplitude = (n * sgt - sg * st) / det;
    f.baseline = (st - f.amplitude * sg) / n;
    f.sse = 0;
    for (const auto& p : s) {
        const double d = p.position - c;
        const double r = p.temperature - (f.baseline + f.amplitude * std::exp(-d * d / (2 * sigma * sigma)));
        f.sse += r * r;
    }
    return f;
}

}  // namespace detail

/// Root-mean-square residual of `fit` over `samples`.
inline double profile_rmse(std::span<const ProfileSample> samples, const BulbFit& fit) {
    double sse = 0;
    for (const auto& p : samples) {
        const double d = p.position - fit.center;
        const double r =
            p.temperature - (fit.baseline + fit.amplitude * std::exp(-d * d / (2 * fit.sigma * fit.sigma)));
        sse += r * r;
    }
    return std::sqrt(sse / static_cast<double>(samples.size()));
}

/// Least-squares fit of T(x) = baseline + A exp(-(x-c)^2 / (2 sigma^2)).
/// Grid search over (c, sigma) with closed-form (A, baseline), then pattern search.
inline BulbFit fit_bulb_profile(std::span<const ProfileSample> samples, const FitOptions& opt = {}) {
    if (samples.size() < 5) throw ContractError("bulb profile needs at least 5 samples");
    for (std::size_t i = 1; i < samples.size(); ++i)
        if (!(samples[i].position > samples[i - 1].position))
            throw ContractError("profile positions must be strictly increasing");
    for (const auto& p : samples)
        if (!std::isfinite(p.position) || !std::isfinite(p.temperature))
            throw ContractError("profile samples must be finite");

    const double n = static_cast<double>(samples.size());
    double mean = 0;
    for (const auto& p : samples) mean += p.temperature / n;
    double var = 0, scale = 0;
    for (const auto& p : samples) {
        var += (p.temperature - mean) * (p.temperature - mean) / n;
        scale = std::max(scale, std::abs(p.temperature));
    }
    if (!(var > 1e-12 * std::max(1.0, scale * scale))) throw DegenerateFitError("profile is flat");

    const double x0 = samples.front().position, x1 = samples.back().position;
    const double range = x1 - x0;
    double min_gap = range;
    for (std::size_t i = 1; i < samples.size(); ++i)
        min_gap = std::min(min_gap, samples[i].position - samples[i - 1].position);

    const double ls_lo = std::log(0.5 * min_gap), ls_hi = std::log(2.0 * range);
    double best_c = 0.5 * (x0 + x1), best_ls = 0.5 * (ls_lo + ls_hi);
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < opt.grid_centers; ++i) {
        const double c = x0 + range * i / (opt.grid_centers - 1);
        for (int j = 0; j < opt.grid_sigmas; ++j) {
            const double ls = ls_lo + (ls_hi - ls_lo) * j / (opt.grid_sigmas - 1);
            const double sse = detail::solve_linear(samples, c, std::exp(ls)).sse;
            if (sse < best) best = sse, best_c = c, best_ls = ls;
        }
    }

    double step_c = range / (opt.grid_centers - 1), step_ls = (ls_hi - ls_lo) / (opt.grid_sigmas - 1);
    bool converged = false;
    for (int it = 0; it < opt.max_iterations; ++it) {
        if (step_c < opt.tolerance * range && step_ls < opt.tolerance) {
            converged = true;
            break;
        }
        bool moved = false;
        for (auto [dc, dls] : {std::pair{step_c, 0.0}, {-step_c, 0.0}, {0.0, step_ls}, {0.0, -step_ls}}) {
            const double sse = detail::solve_linear(samples, best_c + dc, std::exp(best_ls + dls)).sse;
            if (sse < best) {
                best = sse, best_c += dc, best_ls += dls;
                moved = true;
                break;
            }
        }
        if (!moved) step_c *= 0.5, step_ls *= 0.5;
    }
    if (!std::isfinite(best)) throw DegenerateFitError("no Gaussian shape fits the profile");

    const auto lin = detail::solve_linear(samples, best_c, std::exp(best_ls));
    BulbFit fit{lin.amplitude, best_c, std::exp(best_ls), lin.baseline, 0.0, converged};
    if (!(fit.center > x0 && fit.center < x1))
        throw DegenerateFitError("fitted peak is not bracketed by the samples");
    fit.rmse = profile_rmse(samples, fit);
    return fit;
}

struct TemperatureSpan {
    double t_min = 15.0;
    double t_max = 45.0;
};

/// Normalized patch amplitude for a temperature amplitude, clipped to [0,1].
inline double temperature_to_intensity(double amplitude_c, TemperatureSpan span = {}) {
    if (!(span.t_max > span.t_min)) throw ContractError("camera span must satisfy t_max > t_min");
    return std::clamp(amplitude_c / (span.t_max - span.t_min), 0.0, 1.0);
}

}  // namespace irpatch
