#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "irpatch/errors.hpp"

namespace irpatch {

/// Row-major grid of doubles. Used directly for unconstrained fields (gradients,
/// upstream sensitivities) and as the storage behind images and patches.
class Grid {
public:
    Grid() = default;
    Grid(int height, int width, double fill = 0.0) : height_(height), width_(width) {
        if (height < 0 || width < 0) throw ContractError("grid dimensions must be non-negative");
        data_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill);
    }

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(int y, int x) noexcept { return data_[index(y, x)]; }
    double operator()(int y, int x) const noexcept { return data_[index(y, x)]; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    std::span<double> row(int y) noexcept { return {data_.data() + index(y, 0), static_cast<std::size_t>(width_)}; }
    std::span<const double> row(int y) const noexcept {
        return {data_.data() + index(y, 0), static_cast<std::size_t>(width_)};
    }

    bool same_shape(const Grid& other) const noexcept {
        return height_ == other.height_ && width_ == other.width_;
    }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    std::size_t index(int y, int x) const noexcept {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<double> data_;
};

inline bool in_unit_range(const Grid& g) {
    return std::all_of(g.values().begin(), g.values().end(), [](double v) { return v >= 0.0 && v <= 1.0; });
}

inline void clamp_unit(Grid& g) {
    for (double& v : g.values()) v = std::clamp(v, 0.0, 1.0);
}

/// Normalized thermal intensity image; every pixel lies in [0, 1].
class GrayImage : public Grid {
public:
    GrayImage() = default;
    GrayImage(int height, int width, double fill = 0.0) : Grid(height, width, fill) {
        if (height < 1 || width < 1) throw ContractError("image must be at least 1x1");
        if (!(fill >= 0.0 && fill <= 1.0)) throw ContractError("image fill must lie in [0,1]");
    }
    /// Adopts `g` after checking the intensity invariant.
    static GrayImage from_grid(Grid g) {
        if (g.height() < 1 || g.width() < 1) throw ContractError("image must be at least 1x1");
        if (!in_unit_range(g)) throw ContractError("image pixels must lie in [0,1]");
        GrayImage img;
        static_cast<Grid&>(img) = std::move(g);
        return img;
    }
};

enum class PatchMode { gaussian, pixel };

inline std::string to_string(PatchMode m) { return m == PatchMode::gaussian ? "gaussian" : "pixel"; }

/// Square intensity patch. Gaussian-mode patches are rendered from spot parameters;
/// pixel-mode patches are optimized directly.
struct Patch {
    GrayImage pixels;
    PatchMode mode = PatchMode::pixel;

    int side() const noexcept { return pixels.height(); }

    static Patch filled(int side, double value, PatchMode mode = PatchMode::pixel) {
        if (side < 1) throw ContractError("patch side must be >= 1");
        return Patch{GrayImage(side, side, value), mode};
    }
    static Patch from_grid(Grid g, PatchMode mode) {
        if (g.height() != g.width()) throw ContractError("patch grid must be square");
        return Patch{GrayImage::from_grid(std::move(g)), mode};
    }
};

/// Axis-aligned box in image pixels; (x, y) is the top-left corner.
struct BBox {
    double x = 0, y = 0, w = 0, h = 0;

    double right() const noexcept { return x + w; }
    double bottom() const noexcept { return y + h; }
    double area() const noexcept { return w * h; }
    bool valid() const noexcept { return w > 0 && h > 0; }

    friend bool operator==(const BBox&, const BBox&) = default;
};

inline double intersection_area(const BBox& a, const BBox& b) {
    const double iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
    const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
    return iw > 0 && ih > 0 ? iw * ih : 0.0;
}

/// Intersection over union; 0 for disjoint boxes.
inline double iou(const BBox& a, const BBox& b) {
    const double inter = intersection_area(a, b);
    if (inter <= 0) return 0.0;
    const double uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

/// Intersection area over the area of the smaller box.
inline double containment(const BBox& a, const BBox& b) {
    const double smaller = std::min(a.area(), b.area());
    return smaller > 0 ? intersection_area(a, b) / smaller : 0.0;
}

/// Half-open integer pixel rectangle [x0, x1) x [y0, y1).
struct Rect {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    int width() const noexcept { return x1 - x0; }
    int height() const noexcept { return y1 - y0; }
    bool empty() const noexcept { return x1 <= x0 || y1 <= y0; }
    bool contains(int y, int x) const noexcept { return x >= x0 && x < x1 && y >= y0 && y < y1; }
    bool intersects(const Rect& o) const noexcept {
        return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1;
    }
    Rect intersect(const Rect& o) const noexcept {
        return {std::max(x0, o.x0), std::max(y0, o.y0), std::min(x1, o.x1), std::min(y1, o.y1)};
    }

    friend bool operator==(const Rect&, const Rect&) = default;
};

}  // namespace irpatch
