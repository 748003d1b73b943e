#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "irpatch/detect.hpp"
#include "irpatch/imaging.hpp"
#include "irpatch/scenegen.hpp"
#include "irpatch/transforms.hpp"

namespace irpatch {

enum class Optimizer { sgd_momentum_fd, nelder_mead, analytic_sgd };
enum class InitScheme { uniform, grid };

inline std::string to_string(Optimizer o) {
    switch (o) {
        case Optimizer::sgd_momentum_fd: return "sgd-momentum-fd";
        case Optimizer::nelder_mead: return "nelder-mead";
        case Optimizer::analytic_sgd: return "analytic-sgd";
    }
    return "?";
}
inline std::string to_string(InitScheme s) { return s == InitScheme::grid ? "grid" : "uniform"; }

/// How the TV term is scaled before weighting.
enum class TvNormalization {
    sum,       ///< raw total variation
    per_side,  ///< total variation divided by the patch side
};
inline std::string to_string(TvNormalization n) { return n == TvNormalization::sum ? "sum" : "per-side"; }

struct AttackConfig {
    PatchMode mode = PatchMode::gaussian;
    Optimizer optimizer = Optimizer::sgd_momentum_fd;
    double tv_weight = 0.1;
    TvNormalization tv_normalization = TvNormalization::per_side;
    int batch_size = 8;
    int iterations = 100;
    std::optional<double> learning_rate;  ///< unset: mode default
    double momentum = 0.9;
    int eot_draws = 1;
    double fd_step = 0.5;
    double nm_step = 20.0;  ///< initial simplex edge, px
    std::uint64_t seed = 0;

    int num_spots = 22;
    int patch_side = 300;
    InitScheme init = InitScheme::uniform;
    double init_jitter = 0.1;  ///< grid init: uniform jitter as a fraction of the cell size
    double amplitude = 0.354;
    double sigma = 70.07;
    double background = 0.30;

    TransformConfig transforms;
    PlacementConfig placement;
    int target_class = kPersonClass;

    static constexpr double kGaussianLearningRate = 2.0e3;
    static constexpr double kPixelLearningRate = 100.0;

    double lr() const {
        return learning_rate.value_or(mode == PatchMode::gaussian ? kGaussianLearningRate : kPixelLearningRate);
    }

    void validate() const {
        if (!(tv_weight >= 0)) throw ConfigError("tv_weight must be >= 0");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (iterations < 0) throw ConfigError("iterations must be >= 0");
        if (!(lr() > 0) || !std::isfinite(lr())) throw ConfigError("learning rate must be positive");
        if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0,1)");
        if (eot_draws < 1) throw ConfigError("eot_draws must be >= 1");
        if (!(fd_step > 0)) throw ConfigError("fd_step must be > 0");
        if (!(nm_step > 0)) throw ConfigError("nm_step must be > 0");
        if (num_spots < 0) throw ConfigError("num_spots must be >= 0");
        if (patch_side < 1) throw ConfigError("patch_side must be >= 1");
        if (!(init_jitter >= 0 && init_jitter <= 0.5)) throw ConfigError("init_jitter must lie in [0, 0.5]");
        if (!(amplitude >= 0) || !(sigma > 0) || !(background >= 0 && background <= 1))
            throw ConfigError("spot parameters violate s >= 0, sigma > 0, mu in [0,1]");
        if (mode == PatchMode::pixel && optimizer == Optimizer::nelder_mead)
            throw ConfigError("pixel mode needs gradients; nelder-mead is gaussian-only");
        if (!(placement.size_fraction > 0) || !(placement.scale > 0))
            throw ConfigError("placement size must be positive");
        transforms.validate();
    }
};

struct LossTerms {
    double total = 0;
    double objectness = 0;
    double tv = 0;  ///< normalized TV, before weighting
};

struct LossRecord {
    int iteration = 0;
    LossTerms loss;
};

/// Optimizer state. In gaussian mode `gaussian` holds the variables, otherwise `pixels`.
struct AttackState {
    PatchMode mode = PatchMode::gaussian;
    GaussianPatchParams gaussian;
    Patch pixels;
    std::vector<double> velocity;
    int iteration = 0;
    std::vector<LossRecord> history;

    Patch patch(int side) const {
        return mode == PatchMode::gaussian ? render_gaussian_patch(gaussian, side) : pixels;
    }
};

struct AttackResult {
    Patch patch;
    AttackState state;
};

inline double tv_term(const Grid& patch, TvNormalization n) {
    const double tv = total_variation(patch);
    return n == TvNormalization::per_side ? tv / patch.height() : tv;
}

inline GaussianPatchParams spot_params(const AttackConfig& cfg) {
    GaussianPatchParams p;
    p.amplitude = cfg.amplitude;
    p.sigma = cfg.sigma;
    p.background = cfg.background;
    return p;
}

/// Starting point: centers uniform in the central 80% of the patch, or on a jittered grid
/// whose cells tile that central region; pixel mode starts flat at 0.5.
inline AttackState init_params(const AttackConfig& cfg, Rng& rng) {
    AttackState st;
    st.mode = cfg.mode;
    const int side = cfg.patch_side;
    if (cfg.mode == PatchMode::pixel) {
        st.pixels = Patch::filled(side, 0.5, PatchMode::pixel);
        st.velocity.assign(st.pixels.pixels.size(), 0.0);
        return st;
    }
    st.gaussian = spot_params(cfg);
    const int m = cfg.num_spots;
    const double lo = 0.1 * side, span = 0.8 * side;
    if (cfg.init == InitScheme::uniform) {
        for (int i = 0; i < m; ++i) {
            const double x = lo + span * rng.uniform01();
            const double y = lo + span * rng.uniform01();
            st.gaussian.centers.push_back({x, y});
        }
    } else {
        const int g = std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(m)) - 1e-9)));
        const double cell = span / g;
        for (int i = 0; i < m; ++i) {
            const int r = i / g, c = i % g;
            const double j = cfg.init_jitter * cell;
            const double x = lo + cell * (c + 0.5) + rng.uniform(-j, j);
            const double y = lo + cell * (r + 0.5) + rng.uniform(-j, j);
            st.gaussian.centers.push_back({std::clamp(x, 0.0, double(side)), std::clamp(y, 0.0, double(side))});
        }
    }
    st.velocity.assign(static_cast<std::size_t>(2 * m), 0.0);
    return st;
}

inline void project_params(GaussianPatchParams& p, int side) {
    for (auto& c : p.centers) {
        c.x = std::clamp(c.x, 0.0, static_cast<double>(side));
        c.y = std::clamp(c.y, 0.0, static_cast<double>(side));
    }
}

inline void project_params(Patch& p) { clamp_unit(p.pixels); }

/// One evaluation of the attack loss with freshly drawn transforms: per image, each
/// person gets the patch under `eot_draws` independent transforms; the ensemble objectness
/// of the composites is averaged over draws and then over the batch.
inline LossTerms attack_loss(const Patch& patch, std::span<const AnnotatedImage> batch,
                             std::span<const Detector* const> detectors, const AttackConfig& cfg, Rng& rng) {
    if (batch.empty()) throw ContractError("attack batch is empty");
    if (detectors.empty()) throw ContractError("attack needs at least one detector");
    double obj = 0;
    for (const auto& item : batch) {
        double acc = 0;
        for (int d = 0; d < cfg.eot_draws; ++d) {
            std::vector<TransformSample> ts;
            for (std::size_t j = 0; j < item.persons.size(); ++j) ts.push_back(sample_transform(rng, cfg.transforms));
            const auto composite = apply_patch(item.image, patch, item.persons, ts, cfg.placement);
            for (const Detector* det : detectors)
                acc += detail::tagged(*det, [&] { return max_objectness(det->detect(composite.pixels), cfg.target_class); });
        }
        obj += acc / cfg.eot_draws;
    }
    LossTerms l;
    l.objectness = obj / static_cast<double>(batch.size());
    l.tv = tv_term(patch.pixels, cfg.tv_normalization);
    l.total = l.objectness + cfg.tv_weight * l.tv;
    return l;
}

namespace detail {

/// Rendering with one spot swapped out, without re-rendering the others.
class IncrementalRenderer {
public:
    IncrementalRenderer(const GaussianPatchParams& p, int side) : params_(p), side_(side), acc_(render_unclamped(p, side)) {}

    Patch render() const { return clamp_to_patch(acc_, PatchMode::gaussian); }

    Patch with_spot(std::size_t i, SpotCenter moved) const {
        Grid g = acc_;
        accumulate_spot(g, params_.centers[i], params_.amplitude, params_.sigma, -1.0);
        accumulate_spot(g, moved, params_.amplitude, params_.sigma, 1.0);
        return clamp_to_patch(std::move(g), PatchMode::gaussian);
    }

private:
    GaussianPatchParams params_;
    int side_;
    Grid acc_;
};

/// One batch element with transforms frozen for the whole optimizer step.
struct FrozenItem {
    std::size_t index = 0;
    std::vector<std::vector<TransformSample>> draws;  ///< [eot draw][person]
};

/// Scores patches on a frozen batch, reusing per-image detector state across evaluations.
class BatchEvaluator {
public:
    BatchEvaluator(std::span<const AnnotatedImage> data, std::span<const Detector* const> detectors,
                   const AttackConfig& cfg)
        : data_(data), detectors_(detectors), cfg_(cfg), prepared_(detectors.size() * data.size()) {}

    std::vector<FrozenItem> draw_batch(int iteration) const {
        Rng pick(derive_seed(cfg_.seed, {kBatchTag, static_cast<std::uint64_t>(iteration)}));
        const std::size_t n = data_.size();
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::vector<FrozenItem> items;
        for (int b = 0; b < cfg_.batch_size; ++b) {
            std::size_t chosen;
            if (static_cast<std::size_t>(cfg_.batch_size) <= n) {
                const auto j = static_cast<std::size_t>(b) +
                               static_cast<std::size_t>(pick.uniform_int(0, static_cast<int>(n) - 1 - b));
                std::swap(idx[static_cast<std::size_t>(b)], idx[j]);
                chosen = idx[static_cast<std::size_t>(b)];
            } else {
                chosen = static_cast<std::size_t>(pick.uniform_int(0, static_cast<int>(n) - 1));
            }
            FrozenItem it{chosen, {}};
            Rng t(derive_seed(cfg_.seed, {kEotTag, static_cast<std::uint64_t>(iteration), static_cast<std::uint64_t>(b)}));
            for (int d = 0; d < cfg_.eot_draws; ++d) {
                std::vector<TransformSample> ts;
                for (std::size_t j = 0; j < data_[chosen].persons.size(); ++j)
                    ts.push_back(sample_transform(t, cfg_.transforms));
                it.draws.push_back(std::move(ts));
            }
            items.push_back(std::move(it));
        }
        return items;
    }

    double objectness(const Patch& patch, std::span<const FrozenItem> items) {
        double total = 0;
        for (const auto& it : items) {
            const auto& scene = data_[it.index];
            double acc = 0;
            for (const auto& ts : it.draws) acc += item_objectness(patch, scene, it.index, ts);
            total += acc / static_cast<double>(it.draws.size());
        }
        return total / static_cast<double>(items.size());
    }

    LossTerms loss(const Patch& patch, std::span<const FrozenItem> items) {
        LossTerms l;
        l.objectness = objectness(patch, items);
        l.tv = tv_term(patch.pixels, cfg_.tv_normalization);
        l.total = l.objectness + cfg_.tv_weight * l.tv;
        return l;
    }

    /// Loss and its gradient with respect to the patch pixels, through detector gradients.
    LossTerms loss_and_patch_gradient(const Patch& patch, std::span<const FrozenItem> items, Grid& grad) {
        grad = Grid(patch.side(), patch.side());
        double total = 0;
        const double w_item = 1.0 / static_cast<double>(items.size());
        for (const auto& it : items) {
            const auto& scene = data_[it.index];
            const double w = w_item / static_cast<double>(it.draws.size());
            for (const auto& ts : it.draws) {
                std::vector<Overlay> overlays;
                GrayImage img = scene.image;
                for (std::size_t j = 0; j < scene.persons.size(); ++j) {
                    auto ov = make_overlay(img, patch, scene.persons[j], ts[j], cfg_.placement);
                    if (!ov) continue;
                    paste(img, *ov);
                    overlays.push_back(std::move(*ov));
                }
                for (const Detector* det : detectors_) {
                    const auto dets = tagged(*det, [&] { return det->detect(img); });
                    const Detection* best = nullptr;
                    for (const auto& d : dets)
                        if (d.class_id == cfg_.target_class && (!best || d.objectness > best->objectness)) best = &d;
                    if (!best) continue;
                    total += w * best->objectness;
                    Grid g = tagged(*det, [&] { return det->objectness_gradient(img, *best); });
                    for (double& v : g.values()) v *= w;
                    backprop_overlays(g, patch, scene, ts, overlays, grad);
                }
            }
        }
        LossTerms l;
        l.objectness = total;
        l.tv = tv_term(patch.pixels, cfg_.tv_normalization);
        l.total = l.objectness + cfg_.tv_weight * l.tv;
        if (cfg_.tv_weight > 0) {
            const double k = cfg_.tv_weight / (cfg_.tv_normalization == TvNormalization::per_side ? patch.side() : 1.0);
            const Grid tg = total_variation_gradient(patch.pixels);
            auto dst = grad.values();
            const auto src = tg.values();
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += k * src[i];
        }
        return l;
    }

private:
    static constexpr std::uint64_t kBatchTag = 0x6261u;
    static constexpr std::uint64_t kEotTag = 0x656Fu;

    const PreparedImage* prepared(std::size_t det, std::size_t image) {
        auto& slot = prepared_[det * data_.size() + image];
        if (!slot.has_value()) slot = tagged(*detectors_[det], [&] { return detectors_[det]->prepare(data_[image].image); });
        return slot->get();
    }

    double item_objectness(const Patch& patch, const AnnotatedImage& scene, std::size_t index,
                           std::span<const TransformSample> ts) {
        double acc = 0;
        if (scene.persons.size() == 1) {
            auto ov = make_overlay(scene.image, patch, scene.persons[0], ts[0], cfg_.placement);
            std::span<const Overlay> ovs;
            if (ov) ovs = std::span<const Overlay>(&*ov, 1);
            for (std::size_t d = 0; d < detectors_.size(); ++d) {
                const Detector* det = detectors_[d];
                const PreparedImage* prep = prepared(d, index);
                acc += tagged(*det, [&] {
                    return det->overlay_max_objectness(scene.image, prep, ovs, cfg_.target_class);
                });
            }
            return acc;
        }
        const auto composite = apply_patch(scene.image, patch, scene.persons, ts, cfg_.placement);
        for (const Detector* det : detectors_)
            acc += tagged(*det, [&] {
                return det->overlay_max_objectness(composite.pixels, nullptr, {}, cfg_.target_class);
            });
        return acc;
    }

    // Later placements hide earlier ones, so each overlay only receives the image gradient
    // that no later overlay has claimed.
    void backprop_overlays(Grid& image_grad, const Patch& patch, const AnnotatedImage& scene,
                           std::span<const TransformSample> ts, std::span<const Overlay> overlays, Grid& patch_grad) {
        std::size_t k = overlays.size();
        for (std::size_t j = scene.persons.size(); j-- > 0;) {
            const auto geo = placement_geometry(scene.image.height(), scene.image.width(), scene.persons[j], ts[j],
                                                cfg_.placement);
            if (!geo || geo->bounds.empty()) continue;
            const Overlay& ov = overlays[--k];
            overlay_adjoint(image_grad, patch, scene.persons[j], ts[j], cfg_.placement, patch_grad);
            for (int y = ov.rect.y0; y < ov.rect.y1; ++y)
                for (int x = ov.rect.x0; x < ov.rect.x1; ++x)
                    if (ov.mask[static_cast<std::size_t>((y - ov.rect.y0) * ov.rect.width() + (x - ov.rect.x0))])
                        image_grad(y, x) = 0.0;
        }
    }

    std::span<const AnnotatedImage> data_;
    std::span<const Detector* const> detectors_;
    const AttackConfig& cfg_;
    std::vector<std::optional<std::shared_ptr<const PreparedImage>>> prepared_;
};

inline void check_finite(const LossTerms& l, int iteration) {
    if (!std::isfinite(l.total) || !std::isfinite(l.objectness) || !std::isfinite(l.tv))
        throw NonFiniteLossError(iteration, "non-finite loss (L=" + std::to_string(l.total) +
                                                ", L_obj=" + std::to_string(l.objectness) +
                                                ", L_tv=" + std::to_string(l.tv) + ")");
}

inline std::vector<double> flatten(const GaussianPatchParams& p) {
    std::vector<double> v;
    for (const auto& c : p.centers) v.push_back(c.x), v.push_back(c.y);
    return v;
}

inline void unflatten(std::span<const double> v, GaussianPatchParams& p) {
    for (std::size_t i = 0; i < p.centers.size(); ++i) p.centers[i] = {v[2 * i], v[2 * i + 1]};
}

/// Central differences of the loss in every center coordinate; one-sided at the bounds.
inline std::vector<double> fd_gradient(const GaussianPatchParams& p, int side, double h, BatchEvaluator& eval,
                                       std::span<const FrozenItem> items, double base_loss) {
    const IncrementalRenderer r(p, side);
    std::vector<double> g(2 * p.centers.size(), 0.0);
    auto loss_at = [&](std::size_t i, SpotCenter c) { return eval.loss(r.with_spot(i, c), items).total; };
    for (std::size_t i = 0; i < p.centers.size(); ++i) {
        for (int axis = 0; axis < 2; ++axis) {
            const SpotCenter c0 = p.centers[i];
            const double v = axis == 0 ? c0.x : c0.y;
            auto moved = [&](double nv) { return axis == 0 ? SpotCenter{nv, c0.y} : SpotCenter{c0.x, nv}; };
            const bool up = v + h <= side, down = v - h >= 0;
            double d;
            if (up && down)
                d = (loss_at(i, moved(v + h)) - loss_at(i, moved(v - h))) / (2 * h);
            else if (up)
                d = (loss_at(i, moved(v + h)) - base_loss) / h;
            else
                d = (base_loss - loss_at(i, moved(v - h))) / h;
            g[2 * i + static_cast<std::size_t>(axis)] = d;
        }
    }
    return g;
}

inline void project_vector(std::vector<double>& x, int side) {
    for (double& v : x) v = std::clamp(v, 0.0, static_cast<double>(side));
}

/// One Nelder-Mead iteration (reflect, expand, contract, shrink) on this step's batch.
/// `best` receives the lowest vertex; the returned loss is that vertex's loss before the move.
inline LossTerms nelder_mead_step(std::vector<std::vector<double>>& simplex, GaussianPatchParams& best, int side,
                                  BatchEvaluator& eval, std::span<const FrozenItem> items, int iteration) {
    auto score = [&](const std::vector<double>& x) {
        GaussianPatchParams p = best;
        unflatten(x, p);
        const LossTerms l = eval.loss(render_gaussian_patch(p, side), items);
        check_finite(l, iteration);
        return l;
    };
    const std::size_t n = simplex.size();
    std::vector<LossTerms> f;
    for (const auto& x : simplex) f.push_back(score(x));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return f[a].total < f[b].total; });
    const LossTerms recorded = f[order.front()];
    if (n < 2) {
        unflatten(simplex.front(), best);
        return recorded;
    }

    const std::size_t dim = simplex.front().size();
    const std::size_t w = order.back();
    std::vector<double> c(dim, 0.0);
    for (std::size_t k = 0; k + 1 < n; ++k)
        for (std::size_t i = 0; i < dim; ++i) c[i] += simplex[order[k]][i] / static_cast<double>(n - 1);
    auto along = [&](const std::vector<double>& from, double t) {
        std::vector<double> x(dim);
        for (std::size_t i = 0; i < dim; ++i) x[i] = c[i] + t * (from[i] - c[i]);
        project_vector(x, side);
        return x;
    };

    const auto xr = along(simplex[w], -1.0);
    const auto fr = score(xr);
    const double f_best = f[order.front()].total, f_second = f[order[n - 2]].total, f_worst = f[w].total;
    if (fr.total < f_best) {
        const auto xe = along(simplex[w], -2.0);
        const auto fe = score(xe);
        if (fe.total < fr.total)
            simplex[w] = xe, f[w] = fe;
        else
            simplex[w] = xr, f[w] = fr;
    } else if (fr.total < f_second) {
        simplex[w] = xr, f[w] = fr;
    } else {
        const bool outside = fr.total < f_worst;
        const auto xc = outside ? along(simplex[w], -0.5) : along(simplex[w], 0.5);
        const auto fc = score(xc);
        if (fc.total < std::min(fr.total, f_worst)) {
            simplex[w] = xc, f[w] = fc;
        } else {
            const auto& x0 = simplex[order.front()];
            for (std::size_t k = 1; k < n; ++k) {
                auto& x = simplex[order[k]];
                for (std::size_t i = 0; i < dim; ++i) x[i] = x0[i] + 0.5 * (x[i] - x0[i]);
                f[order[k]].total = std::numeric_limits<double>::infinity();
            }
        }
    }
    std::size_t arg = 0;
    for (std::size_t k = 1; k < n; ++k)
        if (f[k].total < f[arg].total) arg = k;
    unflatten(simplex[arg], best);
    return recorded;
}

}  // namespace detail

/// Called after every completed step with the current state.
using StepObserver = std::function<void(const AttackState&)>;

/// Minimizes the EOT attack loss over `dataset` (a training split). Deterministic given cfg.seed.
inline AttackResult optimize_patch(std::span<const AnnotatedImage> dataset, std::span<const Detector* const> detectors,
                                   const AttackConfig& cfg, const StepObserver& observer = {}) {
    cfg.validate();
    if (detectors.empty()) throw ConfigError("attack needs at least one detector");
    const bool needs_gradients = cfg.mode == PatchMode::pixel || cfg.optimizer == Optimizer::analytic_sgd;
    if (needs_gradients)
        for (const Detector* d : detectors)
            if (!d->capabilities().image_gradients)
                throw ConfigError("detector '" + d->name() + "' is scores-only; " + to_string(cfg.mode) + " mode with " +
                                  to_string(cfg.optimizer) + " needs image gradients");
    if (dataset.empty()) throw ContractError("attack dataset is empty");
    for (const auto& a : dataset)
        if (a.persons.empty()) throw ContractError("every attack image needs at least one person box");

    Rng init_rng(derive_seed(cfg.seed, {0x696Eu}));
    AttackState st = init_params(cfg, init_rng);
    detail::BatchEvaluator eval(dataset, detectors, cfg);
    const int side = cfg.patch_side;
    const double lr = cfg.lr();

    // Nelder-Mead keeps a simplex of 2M+1 points; the vertices are rescored on every step's batch.
    std::vector<std::vector<double>> simplex;
    if (cfg.mode == PatchMode::gaussian && cfg.optimizer == Optimizer::nelder_mead) {
        const auto x0 = detail::flatten(st.gaussian);
        simplex.push_back(x0);
        for (std::size_t i = 0; i < x0.size(); ++i) {
            auto x = x0;
            x[i] += x[i] + cfg.nm_step <= side ? cfg.nm_step : -cfg.nm_step;
            simplex.push_back(std::move(x));
        }
    }

    for (int it = 0; it < cfg.iterations; ++it) {
        const auto items = eval.draw_batch(it);
        LossTerms loss;
        if (cfg.mode == PatchMode::pixel) {
            Grid g;
            loss = eval.loss_and_patch_gradient(st.pixels, items, g);
            detail::check_finite(loss, it);
            auto px = st.pixels.pixels.values();
            const auto gv = g.values();
            for (std::size_t i = 0; i < px.size(); ++i) {
                st.velocity[i] = cfg.momentum * st.velocity[i] - lr * gv[i];
                px[i] += st.velocity[i];
            }
            project_params(st.pixels);
        } else if (cfg.optimizer == Optimizer::nelder_mead) {
            loss = detail::nelder_mead_step(simplex, st.gaussian, side, eval, items, it);
        } else {
            std::vector<double> g;
            if (cfg.optimizer == Optimizer::analytic_sgd) {
                Grid pg;
                const Patch patch = render_gaussian_patch(st.gaussian, side);
                loss = eval.loss_and_patch_gradient(patch, items, pg);
                detail::check_finite(loss, it);
                g.clear();
                for (const auto& c : render_gradient(st.gaussian, side, pg)) g.push_back(c.x), g.push_back(c.y);
            } else {
                const detail::IncrementalRenderer r(st.gaussian, side);
                loss = eval.loss(r.render(), items);
                detail::check_finite(loss, it);
                g = detail::fd_gradient(st.gaussian, side, cfg.fd_step, eval, items, loss.total);
            }
            auto x = detail::flatten(st.gaussian);
            for (std::size_t i = 0; i < x.size(); ++i) {
                st.velocity[i] = cfg.momentum * st.velocity[i] - lr * g[i];
                x[i] += st.velocity[i];
            }
            detail::unflatten(x, st.gaussian);
            project_params(st.gaussian, side);
        }
        st.history.push_back({it, loss});
        st.iteration = it + 1;
        if (observer) observer(st);
    }
    return {st.patch(side), std::move(st)};
}

}  // namespace irpatch
