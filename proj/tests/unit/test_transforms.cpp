#include <gtest/gtest.h>

#include <cmath>

#include "irpatch/imaging.hpp"
#include "irpatch/transforms.hpp"

using namespace irpatch;

TEST(SampleTransform, DegenerateIntervalsGiveIdentity) {
    Rng rng(1);
    const auto t = sample_transform(rng, TransformConfig::identity());
    EXPECT_TRUE(t.is_identity());
}

TEST(SampleTransform, AnglesStayInBoundWithCenteredMean) {
    Rng rng(2);
    const TransformConfig cfg;
    double sum = 0;
    for (int i = 0; i < 10000; ++i) {
        const auto t = sample_transform(rng, cfg);
        ASSERT_GE(t.angle_deg, -20.0);
        ASSERT_LE(t.angle_deg, 20.0);
        ASSERT_GT(t.contrast, 0.0);
        ASSERT_GE(t.scale, 0.9);
        ASSERT_LE(t.scale, 1.1);
        sum += t.angle_deg;
    }
    EXPECT_LT(std::abs(sum / 10000), 0.6);
}

TEST(SampleTransform, DeterministicGivenState) {
    Rng a(99), b(99);
    for (int i = 0; i < 5; ++i) EXPECT_EQ(sample_transform(a, {}), sample_transform(b, {}));
}

TEST(SampleTransform, RejectsInvertedIntervals) {
    Rng rng(1);
    TransformConfig cfg;
    cfg.contrast = {1.2, 0.8};
    EXPECT_THROW(sample_transform(rng, cfg), ConfigError);
    cfg = {};
    cfg.max_angle_deg = -1;
    EXPECT_THROW(sample_transform(rng, cfg), ConfigError);
    cfg = {};
    cfg.contrast = {0.0, 1.0};
    EXPECT_THROW(sample_transform(rng, cfg), ConfigError);
}

TEST(ApplyPatch, IdentityPlacementIsOneFifthOfHeight) {
    const GrayImage img(600, 400, 0.2);
    const Patch patch = Patch::filled(300, 0.9);
    const BBox person{100, 50, 250, 500};
    const auto out = apply_patch(img, patch, person, TransformSample{});
    ASSERT_EQ(out.regions.size(), 1u);
    int count = 0;
    for (double v : out.pixels.values()) count += std::abs(v - 0.9) < 1e-12;
    EXPECT_EQ(count, 100 * 100);
    // center at (bbox center x, top + 0.3 h)
    EXPECT_NEAR(out.pixels(200, 225), 0.9, 1e-12);
    EXPECT_NEAR(out.pixels(200 - 50, 225 - 50), 0.9, 1e-12);
    EXPECT_NEAR(out.pixels(200 + 49, 225 + 49), 0.9, 1e-12);
    EXPECT_EQ(out.pixels(200 - 51, 225), 0.2);
    EXPECT_EQ(out.pixels(200 + 50, 225), 0.2);
}

TEST(ApplyPatch, FlatPatchOnFlatBackground) {
    const GrayImage img(300, 300, 0.25);
    const auto out = apply_patch(img, Patch::filled(50, 0.6), BBox{50, 50, 100, 200}, TransformSample{});
    for (int y = 0; y < 300; ++y)
        for (int x = 0; x < 300; ++x) {
            const bool inside = x >= 80 && x < 120 && y >= 90 && y < 130;
            ASSERT_NEAR(out.pixels(y, x), inside ? 0.6 : 0.25, 1e-12) << y << "," << x;
        }
}

TEST(ApplyPatch, ClipsAtImageEdge) {
    const GrayImage img(200, 200, 0.5);
    TransformSample t;
    t.brightness = 0.3;
    t.contrast = 1.2;
    t.noise_amplitude = 0.05;
    t.noise_seed = 7;
    t.angle_deg = 13;
    const auto out = apply_patch(img, Patch::filled(40, 0.9), BBox{-40, -100, 100, 400}, t);
    EXPECT_TRUE(in_unit_range(out.pixels));
    ASSERT_EQ(out.regions.size(), 1u);
    const Rect r = out.regions[0].rect;
    EXPECT_GE(r.x0, 0);
    EXPECT_GE(r.y0, 0);
    EXPECT_LE(r.x1, 200);
    EXPECT_LE(r.y1, 200);
}

TEST(ApplyPatch, DegenerateSizeIsSkippedWithWarning) {
    const GrayImage img(100, 100, 0.5);
    const auto out = apply_patch(img, Patch::filled(10, 0.9), BBox{10, 10, 2, 4}, TransformSample{});
    EXPECT_TRUE(out.regions.empty());
    ASSERT_EQ(out.warnings.size(), 1u);
    EXPECT_EQ(out.pixels, img);
}

TEST(ApplyPatch, OffImagePlacementIsSkipped) {
    const GrayImage img(100, 100, 0.5);
    const auto out = apply_patch(img, Patch::filled(10, 0.9), BBox{500, 500, 100, 200}, TransformSample{});
    EXPECT_TRUE(out.regions.empty());
    EXPECT_FALSE(out.warnings.empty());
}

TEST(ApplyPatch, OnlyWritesInsidePlacementRegion) {
    Rng rng(17);
    for (int trial = 0; trial < 30; ++trial) {
        Grid g(240, 260);
        for (double& v : g.values()) v = rng.uniform01();
        const auto img = GrayImage::from_grid(g);
        Grid pg(32, 32);
        for (double& v : pg.values()) v = rng.uniform01();
        const auto patch = Patch::from_grid(pg, PatchMode::pixel);
        const BBox person{rng.uniform(-50, 200), rng.uniform(-50, 150), rng.uniform(20, 100), rng.uniform(121, 300)};
        const auto t = sample_transform(rng, {});
        const auto out = apply_patch(img, patch, person, t);
        ASSERT_TRUE(in_unit_range(out.pixels));
        const Rect r = out.regions.empty() ? Rect{} : out.regions[0].rect;
        for (int y = 0; y < img.height(); ++y)
            for (int x = 0; x < img.width(); ++x)
                if (!r.contains(y, x)) ASSERT_EQ(out.pixels(y, x), img(y, x));
    }
}

TEST(ApplyPatch, StaysInUnitRangeUnderExtremeAdjustments) {
    const GrayImage img(200, 200, 0.5);
    TransformSample t;
    t.brightness = 0.9;
    t.contrast = 3;
    t.noise_amplitude = 0.5;
    t.noise_seed = 3;
    EXPECT_TRUE(in_unit_range(apply_patch(img, Patch::filled(20, 0.8), BBox{50, 20, 80, 160}, t).pixels));
    t.brightness = -0.9;
    EXPECT_TRUE(in_unit_range(apply_patch(img, Patch::filled(20, 0.2), BBox{50, 20, 80, 160}, t).pixels));
}

TEST(ApplyPatch, IdentityCompositingIsIdempotent) {
    Rng rng(5);
    Grid g(200, 200);
    for (double& v : g.values()) v = rng.uniform01();
    const auto img = GrayImage::from_grid(g);
    GaussianPatchParams p;
    p.centers = {{10, 12}, {40, 30}};
    p.sigma = 6;
    const auto patch = render_gaussian_patch(p, 50);
    const BBox person{40, 20, 90, 180};
    const auto once = apply_patch(img, patch, person, TransformSample{});
    const auto twice = apply_patch(once.pixels, patch, person, TransformSample{});
    EXPECT_EQ(once.pixels, twice.pixels);
}

TEST(ApplyPatch, RequiresOneTransformPerPerson) {
    const GrayImage img(100, 100, 0.5);
    const std::vector<BBox> persons{{10, 10, 40, 80}, {50, 10, 40, 80}};
    const std::vector<TransformSample> ts(1);
    EXPECT_THROW(apply_patch(img, Patch::filled(10, 0.9), persons, ts), ContractError);
}

TEST(ApplyPatch, RejectsInvalidPersonBox) {
    const GrayImage img(100, 100, 0.5);
    EXPECT_THROW(apply_patch(img, Patch::filled(10, 0.9), BBox{10, 10, 0, 80}, TransformSample{}), ContractError);
}

TEST(RotateGrid, RoundTripOnSmoothPatch) {
    GaussianPatchParams p;
    p.centers = {{60, 80}, {150, 150}, {220, 90}, {100, 230}};
    p.sigma = 30;
    p.amplitude = 0.4;
    p.background = 0.3;
    const auto patch = render_gaussian_patch(p, 300);
    Rng rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        const double a = rng.uniform(-20, 20);
        const Grid back = rotate_grid(rotate_grid(patch.pixels, a, p.background), -a, p.background);
        double mad = 0;
        for (std::size_t i = 0; i < back.size(); ++i) mad += std::abs(back.values()[i] - patch.pixels.values()[i]);
        EXPECT_LT(mad / back.size(), 0.02) << "angle " << a;
    }
}

TEST(RotateGrid, ZeroAngleIsIdentity) {
    Rng rng(6);
    Grid g(17, 17);
    for (double& v : g.values()) v = rng.uniform01();
    const Grid r = rotate_grid(g, 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(r.values()[i], g.values()[i], 1e-12);
}

TEST(OverlayAdjoint, MatchesForwardLinearization) {
    Rng rng(12);
    const GrayImage img(160, 160, 0.4);
    Grid pg(24, 24);
    for (double& v : pg.values()) v = rng.uniform(0.3, 0.7);
    const auto patch = Patch::from_grid(pg, PatchMode::pixel);
    const BBox person{40, 10, 70, 140};
    TransformSample t;
    t.angle_deg = 11;
    t.scale = 1.05;
    t.contrast = 0.9;
    t.brightness = 0.02;
    Grid up(160, 160);
    for (double& v : up.values()) v = rng.uniform(-1, 1);
    Grid grad(24, 24);
    overlay_adjoint(up, patch, person, t, {}, grad);
    auto loss = [&](const Patch& q) {
        const auto out = apply_patch(img, q, person, t);
        double s = 0;
        for (std::size_t i = 0; i < up.size(); ++i) s += up.values()[i] * out.pixels.values()[i];
        return s;
    };
    const double h = 1e-4;
    for (int k = 0; k < 40; ++k) {
        const int y = rng.uniform_int(0, 23), x = rng.uniform_int(0, 23);
        Grid a = pg, b = pg;
        a(y, x) += h;
        b(y, x) -= h;
        const double fd = (loss(Patch::from_grid(a, PatchMode::pixel)) - loss(Patch::from_grid(b, PatchMode::pixel))) / (2 * h);
        EXPECT_NEAR(grad(y, x), fd, 1e-6);
    }
}
