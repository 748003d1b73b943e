#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "irpatch/grid.hpp"
#include "irpatch/transforms.hpp"

namespace irpatch {

inline constexpr int kPersonClass = 0;

/// One detector output: box (f_pos), objectness (f_obj) and class score (f_cls).
struct Detection {
    BBox box;
    double objectness = 0;
    double class_score = 0;
    int class_id = kPersonClass;
    friend bool operator==(const Detection&, const Detection&) = default;
};

struct Capabilities {
    bool image_gradients = false;  ///< false means scores only (black box)
};

/// Opaque per-image state a detector may precompute to rescore local edits quickly.
class PreparedImage {
public:
    virtual ~PreparedImage() = default;
};

/// A detector f(x, theta). detect() must be deterministic for a fixed detector and input.
class Detector {
public:
    virtual ~Detector() = default;

    virtual std::string name() const = 0;
    virtual Capabilities capabilities() const = 0;

    /// Detections sorted by descending objectness; an empty list is valid.
    virtual std::vector<Detection> detect(const GrayImage& image) const = 0;

    /// Gradient of `det`'s objectness with respect to every pixel of `image`.
    virtual Grid objectness_gradient(const GrayImage& image, const Detection& det) const {
        (void)image;
        (void)det;
        throw ConfigError("detector '" + name() + "' does not provide image gradients");
    }

    /// Optional fast path: state for `base` reused by overlay_max_objectness. nullptr when unsupported.
    virtual std::shared_ptr<const PreparedImage> prepare(const GrayImage& base) const {
        (void)base;
        return nullptr;
    }

    /// Max objectness of `target_class` detections on `base` with `overlays` pasted in order.
    /// `prepared` must come from prepare(base) or be null.
    virtual double overlay_max_objectness(const GrayImage& base, const PreparedImage* prepared,
                                          std::span<const Overlay> overlays, int target_class) const;
};

/// Largest objectness among target-class detections; 0 when there are none. NaN propagates.
inline double max_objectness(std::span<const Detection> dets, int target_class = kPersonClass) {
    double m = 0.0;
    for (const auto& d : dets) {
        if (d.class_id != target_class) continue;
        if (std::isnan(d.objectness)) return d.objectness;
        m = std::max(m, d.objectness);
    }
    return m;
}

inline double Detector::overlay_max_objectness(const GrayImage& base, const PreparedImage*,
                                               std::span<const Overlay> overlays, int target_class) const {
    GrayImage img = base;
    for (const auto& ov : overlays) paste(img, ov);
    return max_objectness(detect(img), target_class);
}

namespace detail {

template <class F>
auto tagged(const Detector& d, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const TransportError& e) {
        throw TransportError(e.request_id(), "detector '" + d.name() + "': " + e.what());
    } catch (const ProtocolError& e) {
        throw ProtocolError("detector '" + d.name() + "': " + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError("detector '" + d.name() + "': " + e.what());
    } catch (const ContractError& e) {
        throw ContractError("detector '" + d.name() + "': " + e.what());
    }
}

}  // namespace detail

/// Sum over detectors of each detector's max objectness: the objectness part of the ensemble loss.
inline double ensemble_objectness(std::span<const Detector* const> detectors, const GrayImage& image,
                                  int target_class = kPersonClass) {
    if (detectors.empty()) throw ContractError("ensemble needs at least one detector");
    double sum = 0.0;
    for (const Detector* d : detectors)
        sum += detail::tagged(*d, [&] { return max_objectness(d->detect(image), target_class); });
    return sum;
}

/// Stable descending sort by objectness.
inline void sort_by_objectness(std::vector<Detection>& dets) {
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.objectness > b.objectness; });
}

/// Greedy non-maximum suppression. Keeps boxes in descending objectness and drops any box
/// whose IoU with a kept box exceeds `iou_threshold`, or whose containment exceeds
/// `containment_threshold` (1 disables that test).
inline std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold, double containment_threshold = 1.0) {
    sort_by_objectness(dets);
    std::vector<Detection> kept;
    for (const auto& d : dets) {
        const bool clash = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
            return k.class_id == d.class_id &&
                   (iou(k.box, d.box) > iou_threshold || containment(k.box, d.box) > containment_threshold);
        });
        if (!clash) kept.push_back(d);
    }
    return kept;
}

}  // namespace irpatch
