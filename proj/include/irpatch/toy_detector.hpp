#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "irpatch/detect.hpp"

namespace irpatch {

/// Template-matching pedestrian detector used as the built-in attack target.
///
/// Every anchor box is scored by the normalized cross-correlation (NCC) between the
/// zero-mean, unit-norm crop and a zero-mean, unit-norm anisotropic Gaussian template;
/// objectness is logistic(slope * NCC + bias). Boxes above the threshold survive NMS.
struct ToyTemplateConfig {
    std::vector<int> anchor_heights{128, 152, 180, 215, 256, 304};
    double aspect = 0.5;            ///< anchor width / height
    double stride_fraction = 0.125; ///< grid stride / anchor height, both axes
    double spread_u = 0.25;         ///< horizontal template sigma / anchor width
    double spread_v = 1.0 / 3.0;    ///< vertical template sigma / anchor height
    double slope = 8.0;
    double bias = -2.0;
    double score_threshold = 0.5;
    double nms_iou = 0.45;
    double nms_containment = 0.3;   ///< also suppress boxes mostly covered by a stronger one

    void validate() const {
        if (anchor_heights.empty()) throw ConfigError("toy detector needs at least one anchor height");
        for (int h : anchor_heights)
            if (h < 2) throw ConfigError("anchor heights must be >= 2");
        if (!(aspect > 0) || !(stride_fraction > 0) || !(spread_u > 0) || !(spread_v > 0) || !(slope > 0))
            throw ConfigError("toy detector geometry and slope must be positive");
        if (!(score_threshold > 0 && score_threshold < 1)) throw ConfigError("score threshold must lie in (0,1)");
        if (!(nms_iou > 0 && nms_iou <= 1)) throw ConfigError("NMS IoU must lie in (0,1]");
        if (!(nms_containment > 0 && nms_containment <= 1)) throw ConfigError("NMS containment must lie in (0,1]");
        if (!std::isfinite(bias)) throw ConfigError("bias must be finite");
    }
};

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

class ToyDetector final : public Detector {
public:
    explicit ToyDetector(ToyTemplateConfig cfg = {}, std::string name = "toy") : cfg_(std::move(cfg)), name_(std::move(name)) {
        cfg_.validate();
        for (int h : cfg_.anchor_heights) scales_.push_back(make_scale(h));
    }

    const ToyTemplateConfig& config() const noexcept { return cfg_; }
    std::string name() const override { return name_; }
    Capabilities capabilities() const override { return {true}; }

    double objectness_from_ncc(double ncc) const { return logistic(cfg_.slope * ncc + cfg_.bias); }

    std::vector<Detection> detect(const GrayImage& image) const override {
        const auto sums = score_all(image);
        std::vector<Detection> dets;
        for (std::size_t k = 0; k < scales_.size(); ++k) {
            const auto& s = scales_[k];
            const Layout lay = layout(s, image);
            for (int iy = 0; iy < lay.ny; ++iy)
                for (int ix = 0; ix < lay.nx; ++ix) {
                    const double o = objectness_from_ncc(ncc(s, sums[k][static_cast<std::size_t>(iy * lay.nx + ix)]));
                    if (o > cfg_.score_threshold)
                        dets.push_back({anchor_box(s, ix, iy), o, 1.0, kPersonClass});
                }
        }
        return nms(std::move(dets), cfg_.nms_iou, cfg_.nms_containment);
    }

    /// NCC of every anchor, grouped by anchor height (row-major over the anchor grid).
    std::vector<std::vector<double>> ncc_map(const GrayImage& image) const {
        const auto sums = score_all(image);
        std::vector<std::vector<double>> out(scales_.size());
        for (std::size_t k = 0; k < scales_.size(); ++k)
            for (const auto& a : sums[k]) out[k].push_back(ncc(scales_[k], a));
        return out;
    }

    /// Closed-form gradient of the detection's objectness; zero outside its crop.
    Grid objectness_gradient(const GrayImage& image, const Detection& det) const override {
        const auto [k, ix, iy] = locate(image, det.box);
        const auto& s = scales_[k];
        const int x0 = ix * s.stride, y0 = iy * s.stride;
        const AnchorSums a = crop_sums(s, image, x0, y0);
        const double r = ncc(s, a);
        const double o = objectness_from_ncc(r);
        if (std::abs(o - det.objectness) > 1e-9)
            throw ContractError("detection objectness does not match this image");
        Grid g(image.height(), image.width());
        const double n = static_cast<double>(s.w) * s.h;
        const double var = a.s2 - a.s1 * a.s1 / n;
        if (var <= kVarianceFloor * n) return g;
        const double d = std::sqrt(var);
        const double mean = a.s1 / n;
        const double dobj = o * (1.0 - o) * cfg_.slope;
        for (int v = 0; v < s.h; ++v)
            for (int u = 0; u < s.w; ++u) {
                const double t = (s.gx[static_cast<std::size_t>(u)] * s.gy[static_cast<std::size_t>(v)] - s.tmean) / s.tnorm;
                const double c = image(y0 + v, x0 + u) - mean;
                g(y0 + v, x0 + u) = dobj * (t - r * c / d) / d;
            }
        return g;
    }

    std::shared_ptr<const PreparedImage> prepare(const GrayImage& base) const override {
        auto p = std::make_shared<Prepared>();
        p->height = base.height();
        p->width = base.width();
        p->sums = score_all(base);
        p->objectness.resize(scales_.size());
        for (std::size_t k = 0; k < scales_.size(); ++k)
            for (const auto& a : p->sums[k]) p->objectness[k].push_back(objectness_from_ncc(ncc(scales_[k], a)));
        return p;
    }

    double overlay_max_objectness(const GrayImage& base, const PreparedImage* prepared, std::span<const Overlay> overlays,
                                  int target_class) const override {
        if (target_class != kPersonClass) return 0.0;
        const auto* prep = dynamic_cast<const Prepared*>(prepared);
        if (prep && (prep->height != base.height() || prep->width != base.width()))
            throw ContractError("prepared state does not belong to this image");
        double best = 0.0;
        if (prep && overlays.empty()) {
            for (const auto& v : prep->objectness)
                for (double o : v) best = std::max(best, o);
        } else if (prep && overlays.size() == 1) {
            best = incremental_max(base, *prep, overlays.front());
        } else {
            GrayImage img = base;
            for (const auto& ov : overlays) paste(img, ov);
            const auto sums = score_all(img);
            for (std::size_t k = 0; k < scales_.size(); ++k)
                for (const auto& a : sums[k]) best = std::max(best, objectness_from_ncc(ncc(scales_[k], a)));
        }
        return best > cfg_.score_threshold ? best : 0.0;
    }

private:
    static constexpr double kVarianceFloor = 1e-12;

    struct Scale {
        int h = 0, w = 0, stride = 1;
        std::vector<double> gx, gy;
        double tmean = 0, tnorm = 1;
    };
    struct AnchorSums {
        double sw = 0, s1 = 0, s2 = 0;  // sum(c * t), sum(c), sum(c^2) over the crop
    };
    struct Layout {
        int nx = 0, ny = 0;
    };
    struct Prepared final : PreparedImage {
        int height = 0, width = 0;
        std::vector<std::vector<AnchorSums>> sums;
        std::vector<std::vector<double>> objectness;
    };
    struct AnchorRef {
        std::size_t scale;
        int ix, iy;
    };

    Scale make_scale(int h) const {
        Scale s;
        s.h = h;
        s.w = std::max(1, static_cast<int>(std::lround(h * cfg_.aspect)));
        s.stride = std::max(1, static_cast<int>(std::lround(h * cfg_.stride_fraction)));
        const double su = cfg_.spread_u * s.w, sv = cfg_.spread_v * s.h;
        for (int u = 0; u < s.w; ++u) {
            const double d = u - 0.5 * s.w;
            s.gx.push_back(std::exp(-d * d / (2 * su * su)));
        }
        for (int v = 0; v < s.h; ++v) {
            const double d = v - 0.5 * s.h;
            s.gy.push_back(std::exp(-d * d / (2 * sv * sv)));
        }
        double sx = 0, sxx = 0, sy = 0, syy = 0;
        for (double g : s.gx) sx += g, sxx += g * g;
        for (double g : s.gy) sy += g, syy += g * g;
        const double n = static_cast<double>(s.w) * s.h;
        s.tmean = sx * sy / n;
        s.tnorm = std::sqrt(std::max(sxx * syy - n * s.tmean * s.tmean, 1e-300));
        return s;
    }

    static Layout layout(const Scale& s, const Grid& img) {
        if (s.h > img.height() || s.w > img.width()) return {};
        return {(img.width() - s.w) / s.stride + 1, (img.height() - s.h) / s.stride + 1};
    }

    static BBox anchor_box(const Scale& s, int ix, int iy) {
        return {static_cast<double>(ix * s.stride), static_cast<double>(iy * s.stride), static_cast<double>(s.w),
                static_cast<double>(s.h)};
    }

    double ncc(const Scale& s, const AnchorSums& a) const {
        const double n = static_cast<double>(s.w) * s.h;
        const double var = a.s2 - a.s1 * a.s1 / n;
        if (var <= kVarianceFloor * n) return 0.0;
        const double num = (a.sw - s.tmean * a.s1) / s.tnorm;
        return std::clamp(num / std::sqrt(var), -1.0, 1.0);
    }

    AnchorSums crop_sums(const Scale& s, const Grid& img, int x0, int y0) const {
        AnchorSums a;
        for (int v = 0; v < s.h; ++v) {
            double rw = 0, r1 = 0, r2 = 0;
            const auto row = img.row(y0 + v);
            for (int u = 0; u < s.w; ++u) {
                const double c = row[static_cast<std::size_t>(x0 + u)];
                rw += s.gx[static_cast<std::size_t>(u)] * c;
                r1 += c;
                r2 += c * c;
            }
            a.sw += s.gy[static_cast<std::size_t>(v)] * rw;
            a.s1 += r1;
            a.s2 += r2;
        }
        return a;
    }

    // Separable evaluation: weighted row sums per (row, anchor column), then a vertical pass.
    std::vector<std::vector<AnchorSums>> score_all(const Grid& img) const {
        std::vector<std::vector<AnchorSums>> out(scales_.size());
        const int H = img.height();
        std::vector<double> hw, h1, h2;
        for (std::size_t k = 0; k < scales_.size(); ++k) {
            const auto& s = scales_[k];
            const Layout lay = layout(s, img);
            if (lay.nx == 0) continue;
            hw.assign(static_cast<std::size_t>(H * lay.nx), 0.0);
            h1.assign(hw.size(), 0.0);
            h2.assign(hw.size(), 0.0);
            for (int y = 0; y < H; ++y) {
                const auto row = img.row(y);
                for (int ix = 0; ix < lay.nx; ++ix) {
                    const int x0 = ix * s.stride;
                    double rw = 0, r1 = 0, r2 = 0;
                    for (int u = 0; u < s.w; ++u) {
                        const double c = row[static_cast<std::size_t>(x0 + u)];
                        rw += s.gx[static_cast<std::size_t>(u)] * c;
                        r1 += c;
                        r2 += c * c;
                    }
                    const auto i = static_cast<std::size_t>(y * lay.nx + ix);
                    hw[i] = rw;
                    h1[i] = r1;
                    h2[i] = r2;
                }
            }
            auto& sums = out[k];
            sums.resize(static_cast<std::size_t>(lay.nx * lay.ny));
            for (int iy = 0; iy < lay.ny; ++iy)
                for (int ix = 0; ix < lay.nx; ++ix) {
                    AnchorSums a;
                    const int y0 = iy * s.stride;
                    for (int v = 0; v < s.h; ++v) {
                        const auto i = static_cast<std::size_t>((y0 + v) * lay.nx + ix);
                        a.sw += s.gy[static_cast<std::size_t>(v)] * hw[i];
                        a.s1 += h1[i];
                        a.s2 += h2[i];
                    }
                    sums[static_cast<std::size_t>(iy * lay.nx + ix)] = a;
                }
        }
        return out;
    }

    // Rescores only anchors touching the overlay rectangle; the rest keep their base scores.
    double incremental_max(const GrayImage& base, const Prepared& prep, const Overlay& ov) const {
        const Rect f = ov.rect;
        const int fw = f.width(), fh = f.height();
        std::vector<double> d1(static_cast<std::size_t>(fw * fh)), d2(d1.size());
        for (int y = 0; y < fh; ++y)
            for (int x = 0; x < fw; ++x) {
                const double b = base(f.y0 + y, f.x0 + x);
                const double v = ov.values(y, x);
                d1[static_cast<std::size_t>(y * fw + x)] = v - b;
                d2[static_cast<std::size_t>(y * fw + x)] = v * v - b * b;
            }

        double best = 0.0;
        std::vector<double> rw, r1, r2;
        for (std::size_t k = 0; k < scales_.size(); ++k) {
            const auto& s = scales_[k];
            const Layout lay = layout(s, base);
            if (lay.nx == 0) continue;
            auto first = [&](int lo_edge, int extent) {
                // smallest index i with i*stride + extent > lo_edge
                const int num = lo_edge - extent + 1;
                return num <= 0 ? 0 : (num + s.stride - 1) / s.stride;
            };
            const int ix_lo = first(f.x0, s.w), ix_hi = std::min(lay.nx - 1, (f.x1 - 1) / s.stride);
            const int iy_lo = first(f.y0, s.h), iy_hi = std::min(lay.ny - 1, (f.y1 - 1) / s.stride);

            const auto& objs = prep.objectness[k];
            for (int iy = 0; iy < lay.ny; ++iy)
                for (int ix = 0; ix < lay.nx; ++ix) {
                    if (iy >= iy_lo && iy <= iy_hi && ix >= ix_lo && ix <= ix_hi) continue;
                    best = std::max(best, objs[static_cast<std::size_t>(iy * lay.nx + ix)]);
                }
            if (ix_lo > ix_hi || iy_lo > iy_hi) continue;

            const int ncols = ix_hi - ix_lo + 1;
            rw.assign(static_cast<std::size_t>(ncols * fh), 0.0);
            r1.assign(rw.size(), 0.0);
            r2.assign(rw.size(), 0.0);
            for (int c = 0; c < ncols; ++c) {
                const int x0 = (ix_lo + c) * s.stride;
                const int xa = std::max(f.x0, x0), xb = std::min(f.x1, x0 + s.w);
                for (int y = 0; y < fh; ++y) {
                    double aw = 0, a1 = 0, a2 = 0;
                    for (int x = xa; x < xb; ++x) {
                        const auto i = static_cast<std::size_t>(y * fw + (x - f.x0));
                        aw += s.gx[static_cast<std::size_t>(x - x0)] * d1[i];
                        a1 += d1[i];
                        a2 += d2[i];
                    }
                    const auto j = static_cast<std::size_t>(c * fh + y);
                    rw[j] = aw;
                    r1[j] = a1;
                    r2[j] = a2;
                }
            }
            for (int iy = iy_lo; iy <= iy_hi; ++iy) {
                const int y0 = iy * s.stride;
                const int ya = std::max(f.y0, y0), yb = std::min(f.y1, y0 + s.h);
                for (int c = 0; c < ncols; ++c) {
                    const int ix = ix_lo + c;
                    AnchorSums a = prep.sums[k][static_cast<std::size_t>(iy * lay.nx + ix)];
                    for (int y = ya; y < yb; ++y) {
                        const auto j = static_cast<std::size_t>(c * fh + (y - f.y0));
                        a.sw += s.gy[static_cast<std::size_t>(y - y0)] * rw[j];
                        a.s1 += r1[j];
                        a.s2 += r2[j];
                    }
                    best = std::max(best, objectness_from_ncc(ncc(s, a)));
                }
            }
        }
        return best;
    }

    AnchorRef locate(const Grid& img, const BBox& box) const {
        for (std::size_t k = 0; k < scales_.size(); ++k) {
            const auto& s = scales_[k];
            if (box.w != s.w || box.h != s.h) continue;
            const Layout lay = layout(s, img);
            const double fx = box.x / s.stride, fy = box.y / s.stride;
            const int ix = static_cast<int>(std::lround(fx)), iy = static_cast<int>(std::lround(fy));
            if (ix * s.stride == box.x && iy * s.stride == box.y && ix >= 0 && iy >= 0 && ix < lay.nx && iy < lay.ny)
                return {k, ix, iy};
        }
        throw ContractError("detection box is not an anchor of this detector on this image");
    }

    ToyTemplateConfig cfg_;
    std::string name_;
    std::vector<Scale> scales_;
};

}  // namespace irpatch
