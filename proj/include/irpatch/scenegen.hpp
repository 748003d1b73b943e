#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "irpatch/grid.hpp"
#include "irpatch/rng.hpp"

namespace irpatch {

/// Pedestrians shorter than this are dropped from any dataset.
inline constexpr double kMinPersonHeight = 120.0;

enum class Split { train, test };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

struct AnnotatedImage {
    GrayImage image;
    std::vector<BBox> persons;
    Split split = Split::train;
    bool overcrowded = false;  ///< fewer persons than requested could be placed
};

/// Synthetic thermal scene: a warm-body Gaussian blob per person on a textured ambient background.
struct SceneConfig {
    int height = 416;
    int width = 416;
    int min_persons = 1;
    int max_persons = 1;
    double min_person_height = 130;
    double max_person_height = 300;
    double aspect = 0.5;             ///< box width / height
    double background = 0.30;
    double texture_noise = 0.05;     ///< per-pixel Uniform(-a, a)
    double person_intensity = 0.85;  ///< blob peak
    double spread_u = 0.25;          ///< blob sigma_u / box width (matches the toy template)
    double spread_v = 1.0 / 3.0;     ///< blob sigma_v / box height
    double spread_jitter = 0.15;     ///< relative jitter applied to both spreads
    int max_retries = 50;

    void validate() const {
        if (height < 1 || width < 1) throw ConfigError("scene size must be positive");
        if (min_persons < 0 || max_persons < min_persons) throw ConfigError("invalid persons-per-image range");
        if (!(min_person_height > kMinPersonHeight)) throw ConfigError("person heights must exceed 120 px");
        if (!(max_person_height >= min_person_height)) throw ConfigError("invalid person height range");
        if (max_person_height > height || max_person_height * aspect > width)
            throw ConfigError("person boxes do not fit in the image");
        for (double v : {background, person_intensity})
            if (!(v >= 0 && v <= 1)) throw ConfigError("scene intensities must lie in [0,1]");
        if (!(texture_noise >= 0) || !(spread_jitter >= 0 && spread_jitter < 1) || !(aspect > 0))
            throw ConfigError("invalid scene texture or spread settings");
    }
};

inline AnnotatedImage synth_scene(Rng& rng, const SceneConfig& cfg) {
    cfg.validate();
    Grid img(cfg.height, cfg.width);
    for (double& v : img.values()) v = cfg.background + rng.uniform(-cfg.texture_noise, cfg.texture_noise);

    AnnotatedImage out;
    const int wanted = rng.uniform_int(cfg.min_persons, cfg.max_persons);
    for (int p = 0; p < wanted; ++p) {
        bool placed = false;
        for (int attempt = 0; attempt < cfg.max_retries && !placed; ++attempt) {
            const double h = rng.uniform(cfg.min_person_height, cfg.max_person_height);
            const double w = h * cfg.aspect;
            const BBox box{rng.uniform(0, cfg.width - w), rng.uniform(0, cfg.height - h), w, h};
            const double su = cfg.spread_u * w * rng.uniform(1 - cfg.spread_jitter, 1 + cfg.spread_jitter);
            const double sv = cfg.spread_v * h * rng.uniform(1 - cfg.spread_jitter, 1 + cfg.spread_jitter);
            bool clash = false;
            for (const auto& other : out.persons)
                clash = clash || (box.x < other.right() && other.x < box.right() && box.y < other.bottom() &&
                                  other.y < box.bottom());
            if (clash) continue;
            const double cx = box.x + 0.5 * w, cy = box.y + 0.5 * h;
            const double amp = cfg.person_intensity - cfg.background;
            for (int y = 0; y < cfg.height; ++y) {
                const double dy = y - cy;
                const double ey = std::exp(-dy * dy / (2 * sv * sv));
                if (ey < 1e-12) continue;
                for (int x = 0; x < cfg.width; ++x) {
                    const double dx = x - cx;
                    img(y, x) += amp * ey * std::exp(-dx * dx / (2 * su * su));
                }
            }
            out.persons.push_back(box);
            placed = true;
        }
        if (!placed) out.overcrowded = true;
    }
    clamp_unit(img);
    out.image = GrayImage::from_grid(std::move(img));
    return out;
}

struct Dataset {
    std::vector<AnnotatedImage> train;
    std::vector<AnnotatedImage> test;
};

/// Scene i of each split is generated from its own derived seed, so splits are disjoint and
/// any scene can be regenerated independently.
inline Dataset make_dataset(std::uint64_t seed, int n_train, int n_test, const SceneConfig& cfg) {
    if (n_train < 0 || n_test < 0) throw ContractError("split sizes must be non-negative");
    cfg.validate();
    Dataset ds;
    for (int i = 0; i < n_train; ++i) {
        Rng rng(derive_seed(seed, {0x7472u, static_cast<std::uint64_t>(i)}));
        ds.train.push_back(synth_scene(rng, cfg));
        ds.train.back().split = Split::train;
    }
    for (int i = 0; i < n_test; ++i) {
        Rng rng(derive_seed(seed, {0x7465u, static_cast<std::uint64_t>(i)}));
        ds.test.push_back(synth_scene(rng, cfg));
        ds.test.back().split = Split::test;
    }
    return ds;
}

/// Drops person boxes at or below the height filter, then images left without persons.
inline std::vector<AnnotatedImage> filter_persons(std::vector<AnnotatedImage> images) {
    std::vector<AnnotatedImage> kept;
    for (auto& a : images) {
        std::erase_if(a.persons, [](const BBox& b) { return !(b.h > kMinPersonHeight); });
        if (!a.persons.empty()) kept.push_back(std::move(a));
    }
    return kept;
}

}  // namespace irpatch
