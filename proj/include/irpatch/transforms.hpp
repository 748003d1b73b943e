#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "irpatch/grid.hpp"
#include "irpatch/rng.hpp"

namespace irpatch {

struct Interval {
    double lo = 0;
    double hi = 0;
    friend bool operator==(const Interval&, const Interval&) = default;
};

/// Ranges of the random physical transformations applied to the patch.
struct TransformConfig {
    double max_angle_deg = 20.0;           ///< rotation drawn from [-max, +max]
    Interval translate{-0.05, 0.05};       ///< fraction of the person-box height, both axes
    Interval scale{0.9, 1.1};
    Interval brightness{-0.1, 0.1};
    Interval contrast{0.8, 1.2};
    double noise_amplitude = 0.05;         ///< per-pixel additive Uniform(-a, a)

    void validate() const {
        auto check = [](const Interval& i, const char* name) {
            if (!(i.lo <= i.hi)) throw ConfigError(std::string("inverted interval for ") + name);
        };
        if (!(max_angle_deg >= 0)) throw ConfigError("angle bound must be >= 0");
        check(translate, "translate");
        check(scale, "scale");
        check(brightness, "brightness");
        check(contrast, "contrast");
        if (!(scale.lo > 0)) throw ConfigError("scale range must be positive");
        if (!(contrast.lo > 0)) throw ConfigError("contrast range must be positive");
        if (!(noise_amplitude >= 0)) throw ConfigError("noise amplitude must be >= 0");
    }

    /// Every interval collapsed onto the identity transform.
    static TransformConfig identity() {
        return {0.0, {0, 0}, {1, 1}, {0, 0}, {1, 1}, 0.0};
    }
};

/// One draw from the transformation set.
struct TransformSample {
    double angle_deg = 0;
    double dx = 0;  ///< translation, in units of the person-box height
    double dy = 0;
    double scale = 1;
    double brightness = 0;
    double contrast = 1;
    std::uint64_t noise_seed = 0;
    double noise_amplitude = 0;

    /// True when the sample leaves the patch untouched (noise seed is irrelevant then).
    bool is_identity() const {
        return angle_deg == 0 && dx == 0 && dy == 0 && scale == 1 && brightness == 0 && contrast == 1 &&
               noise_amplitude == 0;
    }
    friend bool operator==(const TransformSample&, const TransformSample&) = default;
};

inline TransformSample sample_transform(Rng& rng, const TransformConfig& cfg) {
    cfg.validate();
    TransformSample t;
    t.angle_deg = rng.uniform(-cfg.max_angle_deg, cfg.max_angle_deg);
    t.dx = rng.uniform(cfg.translate.lo, cfg.translate.hi);
    t.dy = rng.uniform(cfg.translate.lo, cfg.translate.hi);
    t.scale = rng.uniform(cfg.scale.lo, cfg.scale.hi);
    t.brightness = rng.uniform(cfg.brightness.lo, cfg.brightness.hi);
    t.contrast = rng.uniform(cfg.contrast.lo, cfg.contrast.hi);
    t.noise_seed = rng.next();
    t.noise_amplitude = cfg.noise_amplitude;
    return t;
}

/// Where the patch goes on a person box.
struct PlacementConfig {
    double size_fraction = 0.2;     ///< patch side relative to the box height
    double anchor_y_fraction = 0.3; ///< patch center below the box top, relative to box height
    double scale = 1.0;             ///< extra side multiplier for size sweeps
};

/// Resolved geometry of one placement: a rotated square of side `side` centered at (cx, cy).
struct PlacementGeometry {
    double cx = 0, cy = 0;
    double side = 0;
    double cos_a = 1, sin_a = 0;
    Rect bounds;  ///< clipped to the image; may be empty
};

inline std::optional<PlacementGeometry> placement_geometry(int image_h, int image_w, const BBox& person,
                                                           const TransformSample& t, const PlacementConfig& pc) {
    if (!person.valid()) throw ContractError("person box must have positive size");
    const double side = person.h * pc.size_fraction * pc.scale * t.scale;
    if (!(side >= 1.0)) return std::nullopt;
    PlacementGeometry g;
    g.side = side;
    g.cx = person.x + 0.5 * person.w + t.dx * person.h;
    g.cy = person.y + pc.anchor_y_fraction * person.h + t.dy * person.h;
    const double a = t.angle_deg * std::numbers::pi / 180.0;
    g.cos_a = std::cos(a);
    g.sin_a = std::sin(a);
    const double e = 0.5 * side * (std::abs(g.cos_a) + std::abs(g.sin_a));
    const Rect raw{static_cast<int>(std::floor(g.cx - e)), static_cast<int>(std::floor(g.cy - e)),
                   static_cast<int>(std::ceil(g.cx + e)) + 1, static_cast<int>(std::ceil(g.cy + e)) + 1};
    g.bounds = raw.intersect(Rect{0, 0, image_w, image_h});
    return g;
}

/// Bilinear tap into a patch grid: four source indices and weights.
struct BilinearTap {
    int idx[4];
    double w[4];
};

namespace detail {

// Maps destination pixel (y, x) into patch coordinates; false when outside the patch square.
inline bool footprint_tap(const PlacementGeometry& g, int patch_side, int y, int x, BilinearTap& tap) {
    const double rx = x + 0.5 - g.cx;
    const double ry = y + 0.5 - g.cy;
    // Inverse rotation takes the destination offset back into the patch frame.
    const double u = g.cos_a * rx + g.sin_a * ry;
    const double v = -g.sin_a * rx + g.cos_a * ry;
    const double px = (u / g.side + 0.5) * patch_side;
    const double py = (v / g.side + 0.5) * patch_side;
    if (!(px >= 0 && px <= patch_side && py >= 0 && py <= patch_side)) return false;
    const double fx = std::clamp(px - 0.5, 0.0, patch_side - 1.0);
    const double fy = std::clamp(py - 0.5, 0.0, patch_side - 1.0);
    const int x0 = static_cast<int>(std::floor(fx));
    const int y0 = static_cast<int>(std::floor(fy));
    const int x1 = std::min(x0 + 1, patch_side - 1);
    const int y1 = std::min(y0 + 1, patch_side - 1);
    const double ax = fx - x0, ay = fy - y0;
    tap.idx[0] = y0 * patch_side + x0;
    tap.idx[1] = y0 * patch_side + x1;
    tap.idx[2] = y1 * patch_side + x0;
    tap.idx[3] = y1 * patch_side + x1;
    tap.w[0] = (1 - ax) * (1 - ay);
    tap.w[1] = ax * (1 - ay);
    tap.w[2] = (1 - ax) * ay;
    tap.w[3] = ax * ay;
    return true;
}

inline double sample(std::span<const double> src, const BilinearTap& tap) {
    return tap.w[0] * src[static_cast<std::size_t>(tap.idx[0])] + tap.w[1] * src[static_cast<std::size_t>(tap.idx[1])] +
           tap.w[2] * src[static_cast<std::size_t>(tap.idx[2])] + tap.w[3] * src[static_cast<std::size_t>(tap.idx[3])];
}

}  // namespace detail

/// Composite content of one placement: `values` covers `rect` and equals the base image
/// wherever `mask` is 0 (outside the rotated patch square).
struct Overlay {
    Rect rect;
    Grid values;
    std::vector<unsigned char> mask;
};

/// Renders the transformed patch over `base` inside the placement bounds. Returns nullopt
/// when the target size is degenerate (< 1 px) or the placement falls off the image.
inline std::optional<Overlay> make_overlay(const GrayImage& base, const Patch& patch, const BBox& person,
                                           const TransformSample& t, const PlacementConfig& pc = {}) {
    const auto geo = placement_geometry(base.height(), base.width(), person, t, pc);
    if (!geo || geo->bounds.empty()) return std::nullopt;
    const Rect r = geo->bounds;
    Overlay ov{r, Grid(r.height(), r.width()), std::vector<unsigned char>(static_cast<std::size_t>(r.height() * r.width()), 0)};
    Rng noise(t.noise_seed);
    const auto src = patch.pixels.values();
    BilinearTap tap;
    for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x) {
            const double n = t.noise_amplitude > 0 ? noise.uniform(-t.noise_amplitude, t.noise_amplitude) : 0.0;
            double& out = ov.values(y - r.y0, x - r.x0);
            if (!detail::footprint_tap(*geo, patch.side(), y, x, tap)) {
                out = base(y, x);
                continue;
            }
            out = std::clamp(t.contrast * detail::sample(src, tap) + t.brightness + n, 0.0, 1.0);
            ov.mask[static_cast<std::size_t>((y - r.y0) * r.width() + (x - r.x0))] = 1;
        }
    return ov;
}

inline void paste(Grid& image, const Overlay& ov) {
    for (int y = ov.rect.y0; y < ov.rect.y1; ++y)
        for (int x = ov.rect.x0; x < ov.rect.x1; ++x) image(y, x) = ov.values(y - ov.rect.y0, x - ov.rect.x0);
}

/// Adjoint of make_overlay with respect to the patch pixels: accumulates
/// d(loss)/d(patch) into `patch_grad` given d(loss)/d(image) in `image_grad`.
/// Pixels whose intensity adjustment saturated pass no gradient.
inline void overlay_adjoint(const Grid& image_grad, const Patch& patch, const BBox& person, const TransformSample& t,
                            const PlacementConfig& pc, Grid& patch_grad) {
    if (!patch_grad.same_shape(patch.pixels)) throw ContractError("patch gradient shape mismatch");
    const auto geo = placement_geometry(image_grad.height(), image_grad.width(), person, t, pc);
    if (!geo || geo->bounds.empty()) return;
    const Rect r = geo->bounds;
    Rng noise(t.noise_seed);
    const auto src = patch.pixels.values();
    auto dst = patch_grad.values();
    BilinearTap tap;
    for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x) {
            const double n = t.noise_amplitude > 0 ? noise.uniform(-t.noise_amplitude, t.noise_amplitude) : 0.0;
            if (!detail::footprint_tap(*geo, patch.side(), y, x, tap)) continue;
            const double pre = t.contrast * detail::sample(src, tap) + t.brightness + n;
            if (pre < 0.0 || pre > 1.0) continue;
            const double gin = image_grad(y, x) * t.contrast;
            if (gin == 0.0) continue;
            for (int k = 0; k < 4; ++k) dst[static_cast<std::size_t>(tap.idx[k])] += gin * tap.w[k];
        }
}

/// A patched image together with the placements that produced it.
struct PatchedImage {
    struct Region {
        BBox person;
        TransformSample transform;
        Rect rect;
    };
    GrayImage base;
    GrayImage pixels;
    std::vector<Region> regions;
    std::vector<std::string> warnings;
};

/// Places `patch` on the upper body of each person box. Degenerate placements are skipped
/// and reported in `warnings`.
inline PatchedImage apply_patch(const GrayImage& image, const Patch& patch, std::span<const BBox> persons,
                                std::span<const TransformSample> transforms, const PlacementConfig& pc = {}) {
    if (persons.size() != transforms.size()) throw ContractError("one transform per person is required");
    PatchedImage out{image, image, {}, {}};
    for (std::size_t i = 0; i < persons.size(); ++i) {
        auto ov = make_overlay(out.pixels, patch, persons[i], transforms[i], pc);
        if (!ov) {
            out.warnings.push_back("placement " + std::to_string(i) + " skipped: target size below 1 px or off-image");
            continue;
        }
        paste(out.pixels, *ov);
        out.regions.push_back({persons[i], transforms[i], ov->rect});
    }
    return out;
}

inline PatchedImage apply_patch(const GrayImage& image, const Patch& patch, const BBox& person,
                                const TransformSample& t, const PlacementConfig& pc = {}) {
    return apply_patch(image, patch, std::span<const BBox>(&person, 1), std::span<const TransformSample>(&t, 1), pc);
}

/// Rotates a square grid about its center with bilinear sampling. Samples falling outside
/// the source keep `outside`.
inline Grid rotate_grid(const Grid& src, double angle_deg, double outside = 0.0) {
    if (src.height() != src.width()) throw ContractError("rotate_grid expects a square grid");
    const int n = src.height();
    PlacementGeometry g;
    g.cx = g.cy = 0.5 * n;
    g.side = n;
    const double a = angle_deg * std::numbers::pi / 180.0;
    g.cos_a = std::cos(a);
    g.sin_a = std::sin(a);
    Grid out(n, n, outside);
    BilinearTap tap;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            if (detail::footprint_tap(g, n, y, x, tap)) out(y, x) = detail::sample(src.values(), tap);
    return out;
}

}  // namespace irpatch
