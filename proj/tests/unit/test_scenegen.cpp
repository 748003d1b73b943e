#include <gtest/gtest.h>

#include "irpatch/evaluate.hpp"
#include "irpatch/scenegen.hpp"
#include "irpatch/toy_detector.hpp"

using namespace irpatch;

TEST(SynthScene, ZeroPersonsIsBackground) {
    SceneConfig cfg;
    cfg.min_persons = cfg.max_persons = 0;
    Rng rng(1);
    const auto a = synth_scene(rng, cfg);
    EXPECT_TRUE(a.persons.empty());
    for (double v : a.image.values()) {
        EXPECT_GE(v, 0.25);
        EXPECT_LE(v, 0.35);
    }
}

TEST(SynthScene, DeterministicGivenSeed) {
    Rng a(7), b(7);
    const auto x = synth_scene(a, {}), y = synth_scene(b, {});
    EXPECT_EQ(x.image, y.image);
    EXPECT_EQ(x.persons, y.persons);
}

TEST(SynthScene, DetectorRecoversSinglePerson) {
    const ToyDetector det;
    Rng rng(12);
    const auto a = synth_scene(rng, {});
    ASSERT_EQ(a.persons.size(), 1u);
    const auto dets = det.detect(a.image);
    ASSERT_FALSE(dets.empty());
    EXPECT_GT(iou(dets[0].box, a.persons[0]), 0.5);
}

TEST(SynthScene, AnnotationsPassHeightFilterAndFitImage) {
    SceneConfig cfg;
    cfg.max_persons = 3;
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        const auto a = synth_scene(rng, cfg);
        EXPECT_TRUE(in_unit_range(a.image));
        for (const auto& b : a.persons) {
            EXPECT_GT(b.h, kMinPersonHeight);
            EXPECT_GE(b.x, 0);
            EXPECT_GE(b.y, 0);
            EXPECT_LE(b.right(), cfg.width);
            EXPECT_LE(b.bottom(), cfg.height);
        }
    }
}

TEST(SynthScene, OvercrowdingIsFlagged) {
    SceneConfig cfg;
    cfg.min_persons = cfg.max_persons = 12;
    cfg.min_person_height = cfg.max_person_height = 300;
    Rng rng(2);
    const auto a = synth_scene(rng, cfg);
    EXPECT_TRUE(a.overcrowded);
    EXPECT_LT(a.persons.size(), 12u);
}

TEST(SceneConfig, RejectsInvalid) {
    SceneConfig cfg;
    cfg.min_person_height = 100;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.person_intensity = 1.5;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = {};
    cfg.max_person_height = 500;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(MakeDataset, EmptySplits) {
    const auto ds = make_dataset(1, 0, 0, {});
    EXPECT_TRUE(ds.train.empty());
    EXPECT_TRUE(ds.test.empty());
    EXPECT_THROW(make_dataset(1, -1, 0, {}), ContractError);
}

TEST(MakeDataset, SplitsAreDisjointDeterministicAndDetectable) {
    const auto ds = make_dataset(2024, 50, 20, {});
    ASSERT_EQ(ds.train.size(), 50u);
    ASSERT_EQ(ds.test.size(), 20u);
    std::vector<const AnnotatedImage*> all;
    for (const auto& a : ds.train) EXPECT_EQ(a.split, Split::train), all.push_back(&a);
    for (const auto& a : ds.test) EXPECT_EQ(a.split, Split::test), all.push_back(&a);
    for (std::size_t i = 0; i < all.size(); ++i)
        for (std::size_t j = i + 1; j < all.size(); ++j) EXPECT_FALSE(all[i]->image == all[j]->image);

    const auto again = make_dataset(2024, 50, 20, {});
    for (std::size_t i = 0; i < ds.train.size(); ++i) EXPECT_EQ(ds.train[i].image, again.train[i].image);

    const ToyDetector det;
    std::vector<ImageDetection> preds;
    std::vector<ImageBox> gt;
    int i = 0;
    for (const auto* a : all) {
        for (const auto& d : det.detect(a->image)) preds.push_back({i, d});
        for (const auto& b : a->persons) gt.push_back({i, b});
        ++i;
    }
    EXPECT_GT(average_precision(pr_curve(preds, gt)), 0.9);
}

TEST(MakeDataset, CleanDetectabilityOnHundredScenes) {
    const ToyDetector det;
    const auto ds = make_dataset(77, 0, 100, {});
    int found = 0, total = 0;
    for (const auto& a : ds.test) {
        const auto dets = det.detect(a.image);
        for (const auto& b : a.persons) {
            ++total;
            for (const auto& d : dets)
                if (iou(d.box, b) >= 0.5) {
                    ++found;
                    break;
                }
        }
    }
    EXPECT_GE(found, 0.9 * total);
}

TEST(FilterPersons, DropsShortBoxesAndEmptyImages) {
    std::vector<AnnotatedImage> v(2);
    v[0].image = GrayImage(10, 10, 0.1);
    v[0].persons = {{0, 0, 50, 120}, {0, 0, 50, 121}};
    v[1].image = GrayImage(10, 10, 0.1);
    v[1].persons = {{0, 0, 50, 100}};
    const auto out = filter_persons(v);
    ASSERT_EQ(out.size(), 1u);
    ASSERT_EQ(out[0].persons.size(), 1u);
    EXPECT_EQ(out[0].persons[0].h, 121);
}
