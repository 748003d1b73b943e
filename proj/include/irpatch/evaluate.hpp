#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "irpatch/detect.hpp"
#include "irpatch/scenegen.hpp"
#include "irpatch/transforms.hpp"

namespace irpatch {

struct ImageDetection {
    int image = 0;
    Detection det;
};

struct ImageBox {
    int image = 0;
    BBox box;
    friend bool operator==(const ImageBox&, const ImageBox&) = default;
};

struct PRPoint {
    double recall = 0;
    double precision = 0;
    friend bool operator==(const PRPoint&, const PRPoint&) = default;
};

/// One point per distinct confidence threshold, swept from high to low.
struct PRCurve {
    std::vector<PRPoint> points;
    std::vector<double> confidences;
    int num_gt = 0;
};

/// Greedy matching in descending objectness: each prediction takes the unmatched ground-truth
/// box of its image with the highest IoU >= `iou_threshold` (true positive), else it is a false positive.
inline PRCurve pr_curve(std::span<const ImageDetection> predictions, std::span<const ImageBox> ground_truth,
                        double iou_threshold = 0.5) {
    std::vector<std::size_t> order(predictions.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return predictions[a].det.objectness > predictions[b].det.objectness;
    });

    PRCurve curve;
    curve.num_gt = static_cast<int>(ground_truth.size());
    std::vector<bool> matched(ground_truth.size(), false);
    int tp = 0, fp = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        const auto& p = predictions[order[k]];
        double best = -1;
        std::size_t best_j = 0;
        for (std::size_t j = 0; j < ground_truth.size(); ++j) {
            if (matched[j] || ground_truth[j].image != p.image) continue;
            const double o = iou(p.det.box, ground_truth[j].box);
            if (o >= iou_threshold && o > best) best = o, best_j = j;
        }
        if (best >= 0) {
            matched[best_j] = true;
            ++tp;
        } else {
            ++fp;
        }
        // Tied confidences form one threshold: emit a point only after the last of them.
        if (k + 1 < order.size() && predictions[order[k + 1]].det.objectness == p.det.objectness) continue;
        const double recall = curve.num_gt > 0 ? static_cast<double>(tp) / curve.num_gt : 0.0;
        curve.points.push_back({recall, static_cast<double>(tp) / (tp + fp)});
        curve.confidences.push_back(p.det.objectness);
    }
    return curve;
}

/// All-point interpolated area under the PR curve: sum over recall steps of the step width times
/// the best precision at that recall or beyond. With no ground truth, AP is 1 when there are also
/// no predictions and 0 otherwise.
inline double average_precision(const PRCurve& curve) {
    if (curve.num_gt == 0) return curve.points.empty() ? 1.0 : 0.0;
    const auto& pts = curve.points;
    std::vector<double> envelope(pts.size());
    double run = 0;
    for (std::size_t k = pts.size(); k-- > 0;) {
        run = std::max(run, pts[k].precision);
        envelope[k] = run;
    }
    double ap = 0, prev_recall = 0;
    for (std::size_t k = 0; k < pts.size(); ++k) {
        ap += (pts[k].recall - prev_recall) * envelope[k];
        prev_recall = pts[k].recall;
    }
    return ap;
}

/// The detector's own output on unpatched images, used as ground truth.
inline std::vector<ImageBox> clean_gt_protocol(const Detector& detector, std::span<const GrayImage> images,
                                               double threshold = 0.5, int target_class = kPersonClass) {
    std::vector<ImageBox> gt;
    for (std::size_t i = 0; i < images.size(); ++i)
        for (const auto& d : detail::tagged(detector, [&] { return detector.detect(images[i]); }))
            if (d.class_id == target_class && d.objectness > threshold) gt.push_back({static_cast<int>(i), d.box});
    return gt;
}

enum class ControlKind { blank, noise };

inline constexpr double kBlankLevel = 0.75;

inline Patch make_control_patch(ControlKind kind, int side, Rng& rng) {
    Patch p = Patch::filled(side, kBlankLevel);
    if (kind == ControlKind::noise)
        for (double& v : p.pixels.values()) v = rng.uniform01();
    return p;
}

/// A labeled condition; no patch means the unpatched ("none") run.
struct Condition {
    std::string label;
    std::optional<Patch> patch;
    double scale = 1.0;
};

struct EvalConfig {
    TransformConfig transforms;
    PlacementConfig placement;
    std::uint64_t seed = 0;
    double iou_threshold = 0.5;
    double gt_threshold = 0.5;
    int target_class = kPersonClass;
};

struct APReport {
    std::string condition;
    double scale = 1.0;
    double ap_clean_gt = 0;
    double ap_drop = 0;  ///< percent, (1 - ap_clean_gt) * 100
    double ap_annotations = std::numeric_limits<double>::quiet_NaN();
    int images = 0;
    int gt_boxes = 0;
    int annotation_boxes = 0;
    int predictions = 0;
    PRCurve curve;
};

/// The evaluation transform of every person in image `index`; shared by all conditions.
inline std::vector<TransformSample> eval_transforms(const EvalConfig& cfg, std::size_t index, std::size_t persons) {
    Rng rng(derive_seed(cfg.seed, {0x6576616Cu, static_cast<std::uint64_t>(index)}));
    std::vector<TransformSample> ts;
    for (std::size_t j = 0; j < persons; ++j) ts.push_back(sample_transform(rng, cfg.transforms));
    return ts;
}

inline GrayImage composite_for_eval(const AnnotatedImage& a, const Patch& patch, std::size_t index, double scale,
                                    const EvalConfig& cfg) {
    PlacementConfig pc = cfg.placement;
    pc.scale *= scale;
    const auto ts = eval_transforms(cfg, index, a.persons.size());
    return apply_patch(a.image, patch, a.persons, ts, pc).pixels;
}

/// Evaluates each condition against clean-run ground truth with paired, seeded placements.
inline std::vector<APReport> run_condition_suite(std::span<const AnnotatedImage> data, const Detector& detector,
                                                 std::span<const Condition> conditions, const EvalConfig& cfg) {
    if (data.empty()) throw ContractError("evaluation dataset is empty");
    cfg.transforms.validate();
    std::vector<GrayImage> clean;
    std::vector<ImageBox> annotations;
    for (std::size_t i = 0; i < data.size(); ++i) {
        clean.push_back(data[i].image);
        for (const auto& b : data[i].persons) annotations.push_back({static_cast<int>(i), b});
    }
    const auto gt = clean_gt_protocol(detector, clean, cfg.gt_threshold, cfg.target_class);

    std::vector<APReport> reports;
    for (const auto& cond : conditions) {
        std::vector<ImageDetection> preds;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const GrayImage img = cond.patch ? composite_for_eval(data[i], *cond.patch, i, cond.scale, cfg) : data[i].image;
            for (const auto& d : detail::tagged(detector, [&] { return detector.detect(img); }))
                if (d.class_id == cfg.target_class) preds.push_back({static_cast<int>(i), d});
        }
        APReport r;
        r.condition = cond.label;
        r.scale = cond.scale;
        r.curve = pr_curve(preds, gt, cfg.iou_threshold);
        r.ap_clean_gt = average_precision(r.curve);
        r.ap_drop = (1.0 - r.ap_clean_gt) * 100.0;
        r.ap_annotations = average_precision(pr_curve(preds, annotations, cfg.iou_threshold));
        r.images = static_cast<int>(data.size());
        r.gt_boxes = static_cast<int>(gt.size());
        r.annotation_boxes = static_cast<int>(annotations.size());
        r.predictions = static_cast<int>(preds.size());
        reports.push_back(std::move(r));
    }
    return reports;
}

/// Side multipliers of the patch-size sweep.
inline const std::vector<double>& size_sweep_scales() {
    static const std::vector<double> s{2.0, 1.5, 1.0, 2.0 / 3.0, 0.5};
    return s;
}

}  // namespace irpatch
