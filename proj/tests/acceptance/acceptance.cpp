// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "irpatch/attack.hpp"
#include "irpatch/calibrate.hpp"
#include "irpatch/config.hpp"
#include "irpatch/evaluate.hpp"
#include "irpatch/external_detector.hpp"
#include "irpatch/io.hpp"
#include "irpatch/scenegen.hpp"
#include "irpatch/toy_detector.hpp"
#include "irpatch/wire.hpp"
#include "oracles.hpp"

using namespace irpatch;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string num(double v, int prec = 3) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    return buf;
}

double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
    double num2 = 0, den2 = 0;
    for (std::size_t i = 0; i < a.size(); ++i) num2 += (a[i] - b[i]) * (a[i] - b[i]), den2 += b[i] * b[i];
    return std::sqrt(num2) / std::max(std::sqrt(den2), 1e-300);
}

ExperimentConfig desk_config(std::uint64_t seed) {
    auto cfg = load_config(fs::path(IRPATCH_CONFIG_DIR) / "desk_experiment.json");
    cfg.seed = seed;
    return cfg;
}

// Three template-matcher variants: two for the ensemble, the last one held out.
ToyTemplateConfig variant(int v) {
    ToyTemplateConfig c;
    if (v == 1) c.slope = 6, c.bias = -1.5, c.spread_u = 0.22, c.spread_v = 0.30;
    if (v == 2) c.slope = 10, c.bias = -2.5, c.spread_u = 0.28, c.spread_v = 0.36;
    return c;
}

// ---------------------------------------------------------------- 1-4, 9

Outcome rendering_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(101);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int side = rng.uniform_int(1, 300);
        GaussianPatchParams p;
        p.sigma = rng.uniform(0.5, 120);
        p.amplitude = rng.uniform(0, 1);
        p.background = rng.uniform01();
        const int m = rng.uniform_int(0, 40);
        for (int i = 0; i < m; ++i) p.centers.push_back({rng.uniform(0, side), rng.uniform(0, side)});
        const Patch got = render_gaussian_patch(p, side);
        const auto want = oracle::render(p, side);
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x)
                worst = std::max(worst, std::abs(got.pixels(y, x) - want[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)]));
    }
    const double t = seconds_since(t0);
    return {worst <= 1e-9 && t < 30, "max |diff| " + num(worst) + " over 100 patches in " + num(t) + " s"};
}

Outcome tv_oracle() {
    Rng rng(202);
    double worst = 0;
    for (int side : {8, 64})
        for (int trial = 0; trial < 100; ++trial) {
            Grid g(side, side);
            for (double& v : g.values()) v = rng.uniform01();
            worst = std::max(worst, std::abs(total_variation(g) - oracle::total_variation(oracle::rows(g))));
        }
    return {worst <= 1e-9, "max |diff| " + num(worst) + " over 200 patches"};
}

Outcome gradient_checks() {
    Rng rng(303);
    double worst_render = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const int side = rng.uniform_int(16, 64);
        GaussianPatchParams p;
        const int m = rng.uniform_int(1, 6);
        p.sigma = rng.uniform(2, 15);
        p.background = 0.2;
        p.amplitude = rng.uniform(0.05, 0.7 / m);
        for (int i = 0; i < m; ++i) p.centers.push_back({rng.uniform(2, side - 2), rng.uniform(2, side - 2)});
        Grid up(side, side);
        for (double& v : up.values()) v = rng.uniform(-1, 1);
        auto loss = [&](const GaussianPatchParams& q) {
            const auto r = oracle::render(q, side, false);
            double s = 0;
            for (int y = 0; y < side; ++y)
                for (int x = 0; x < side; ++x) s += up(y, x) * r[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)];
            return s;
        };
        std::vector<double> an, fd;
        const auto g = render_gradient(p, side, up);
        const double h = 1e-5;
        for (int i = 0; i < m; ++i)
            for (int axis = 0; axis < 2; ++axis) {
                auto a = p, b = p;
                auto& ca = a.centers[static_cast<std::size_t>(i)];
                auto& cb = b.centers[static_cast<std::size_t>(i)];
                (axis ? ca.y : ca.x) += h;
                (axis ? cb.y : cb.x) -= h;
                fd.push_back((loss(a) - loss(b)) / (2 * h));
                an.push_back(axis ? g[static_cast<std::size_t>(i)].y : g[static_cast<std::size_t>(i)].x);
            }
        worst_render = std::max(worst_render, rel_error(an, fd));
    }

    double worst_toy = 0;
    bool outside_zero = true;
    for (int trial = 0; trial < 50; ++trial) {
        const int ah = trial % 2 ? 32 : 48;
        ToyTemplateConfig c;
        c.anchor_heights = {ah};
        c.score_threshold = 0.01;
        const ToyDetector det(c);
        Grid g(96, 72);
        for (double& v : g.values()) v = rng.uniform(0.2, 0.6);
        oracle::stamp_template(g, ah, rng.uniform_int(0, 72 - ah / 2), rng.uniform_int(0, 96 - ah), rng.uniform(0.05, 0.3));
        const auto img = GrayImage::from_grid(g);
        const auto dets = det.detect(img);
        if (dets.empty()) return {false, "no detection on trial " + std::to_string(trial)};
        const auto& d = dets.front();
        const Grid grad = det.objectness_gradient(img, d);
        const int x0 = static_cast<int>(d.box.x), y0 = static_cast<int>(d.box.y);
        const int x1 = static_cast<int>(d.box.right()), y1 = static_cast<int>(d.box.bottom());
        auto score = [&](const Grid& q) { return det.objectness_from_ncc(oracle::direct_ncc(q, ah, x0, y0)); };
        std::vector<double> an, fd;
        const double h = 1e-5;
        for (int y = 0; y < g.height(); ++y)
            for (int x = 0; x < g.width(); ++x) {
                if (x < x0 || x >= x1 || y < y0 || y >= y1) {
                    outside_zero = outside_zero && grad(y, x) == 0.0;
                    continue;
                }
                Grid a = g, b = g;
                a(y, x) += h;
                b(y, x) -= h;
                fd.push_back((score(a) - score(b)) / (2 * h));
                an.push_back(grad(y, x));
            }
        worst_toy = std::max(worst_toy, rel_error(an, fd));
    }
    return {worst_render < 1e-4 && worst_toy < 1e-4 && outside_zero,
            "render rel err " + num(worst_render) + ", toy rel err " + num(worst_toy) + " (50 configs each)"};
}

Outcome ap_oracle() {
    Rng rng(404);
    double worst = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int images = rng.uniform_int(1, 3);
        const int ngt = rng.uniform_int(0, 5);
        const int np = rng.uniform_int(0, 10 - ngt);
        std::vector<ImageBox> gt;
        std::vector<ImageDetection> preds;
        for (int i = 0; i < ngt; ++i)
            gt.push_back({rng.uniform_int(0, images - 1),
                          {4.0 * rng.uniform_int(0, 4), 4.0 * rng.uniform_int(0, 4), 8.0 + 2 * rng.uniform_int(0, 2), 8.0}});
        for (int i = 0; i < np; ++i) {
            const double conf = 0.1 * rng.uniform_int(1, 9);
            if (!gt.empty() && rng.uniform01() < 0.6) {
                const auto& g = gt[static_cast<std::size_t>(rng.uniform_int(0, ngt - 1))];
                preds.push_back({g.image, {{g.box.x + rng.uniform_int(-2, 2), g.box.y + rng.uniform_int(-2, 2), g.box.w, g.box.h}, conf, 1, 0}});
            } else {
                preds.push_back({rng.uniform_int(0, images - 1), {{4.0 * rng.uniform_int(0, 4), 4.0 * rng.uniform_int(0, 4), 8, 8}, conf, 1, 0}});
            }
        }
        worst = std::max(worst, std::abs(average_precision(pr_curve(preds, gt)) - oracle::average_precision(preds, gt)));
    }
    const std::vector<ImageBox> one{{0, {0, 0, 10, 10}}};
    const std::vector<ImageDetection> hand{{0, {{50, 50, 10, 10}, 0.95, 1, 0}}, {0, {{0, 0, 10, 10}, 0.9, 1, 0}}};
    const double hand_ap = average_precision(pr_curve(hand, one));
    return {worst <= 1e-9 && std::abs(hand_ap - 0.5) <= 1e-12,
            "max |diff| " + num(worst) + " over 200 instances, hand example AP " + num(hand_ap)};
}

Outcome calibration() {
    auto profile = [](double noise, std::uint64_t seed) {
        Rng rng(seed);
        std::vector<ProfileSample> s;
        for (int i = 0; i <= 100; ++i) {
            const double x = 4.0 * i;
            double t = 30.0 + 10.62 * std::exp(-(x - 200) * (x - 200) / (2 * 70.07 * 70.07));
            if (noise > 0) t += rng.uniform(-noise, noise);
            s.push_back({x, t});
        }
        return s;
    };
    auto rel = [](double got, double want) { return std::abs(got - want) / want; };
    const auto clean = fit_bulb_profile(profile(0, 0));
    const double clean_err = std::max(rel(clean.amplitude, 10.62), rel(clean.sigma, 70.07));
    double noisy_err = 0, rmse_diff = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        const auto s = profile(0.15, seed);
        const auto fit = fit_bulb_profile(s);
        noisy_err = std::max({noisy_err, rel(fit.amplitude, 10.62), rel(fit.sigma, 70.07)});
        std::vector<double> x, t;
        for (const auto& p : s) x.push_back(p.position), t.push_back(p.temperature);
        rmse_diff = std::max(rmse_diff, std::abs(fit.rmse - oracle::rmse(x, t, fit.amplitude, fit.center, fit.sigma, fit.baseline)));
    }
    return {clean_err <= 1e-3 && noisy_err <= 0.02 && rmse_diff <= 1e-12,
            "noiseless rel err " + num(clean_err) + ", noisy worst " + num(noisy_err) + " (100 seeds), rmse diff " +
                num(rmse_diff)};
}

// ---------------------------------------------------------------- 5-8

struct SeedResult {
    double adv = 0, blank = 0, noise = 0;  // scale 1
    double half = 0, twice = 0;
    double m9 = 0, m36 = 0;
    double single = 0, ensemble = 0;
    double efficacy_seconds = 0;
};

SeedResult run_seed(std::uint64_t seed) {
    SeedResult r;
    const auto cfg = desk_config(seed);
    const auto ds = make_dataset(seed, cfg.dataset.n_train, cfg.dataset.n_test, cfg.dataset.scene);
    const auto ev = cfg.evaluation();
    const ToyDetector det;
    const Detector* one[] = {&det};

    auto t0 = std::chrono::steady_clock::now();
    const auto res = optimize_patch(ds.train, one, cfg.resolved_attack());
    Rng ctrl(derive_seed(seed, {0x63746Cu}));
    const auto side = res.patch.side();
    const std::vector<Condition> conds{{"adversarial", res.patch, 1.0},
                                       {"blank", make_control_patch(ControlKind::blank, side, ctrl), 1.0},
                                       {"noise", make_control_patch(ControlKind::noise, side, ctrl), 1.0},
                                       {"adversarial", res.patch, 0.5},
                                       {"adversarial", res.patch, 2.0}};
    const auto rep = run_condition_suite(ds.test, det, conds, ev);
    r.adv = rep[0].ap_drop, r.blank = rep[1].ap_drop, r.noise = rep[2].ap_drop;
    r.half = rep[3].ap_drop, r.twice = rep[4].ap_drop;
    r.efficacy_seconds = seconds_since(t0);

    for (int m : {9, 36}) {
        AttackConfig a = cfg.resolved_attack();
        a.num_spots = m;
        a.init = InitScheme::grid;
        const auto p = optimize_patch(ds.train, one, a);
        const std::vector<Condition> c{{"M", p.patch, 1.0}};
        (m == 9 ? r.m9 : r.m36) = run_condition_suite(ds.test, det, c, ev)[0].ap_drop;
    }

    const ToyDetector va(variant(0), "toy-a"), vb(variant(1), "toy-b"), held(variant(2), "toy-c");
    const Detector* single[] = {&va};
    const Detector* pair[] = {&va, &vb};
    const auto ps = optimize_patch(ds.train, single, cfg.resolved_attack());
    const auto pe = optimize_patch(ds.train, pair, cfg.resolved_attack());
    const std::vector<Condition> c{{"single", ps.patch, 1.0}, {"ensemble", pe.patch, 1.0}};
    const auto tr = run_condition_suite(ds.test, held, c, ev);
    r.single = tr[0].ap_drop, r.ensemble = tr[1].ap_drop;
    return r;
}

// ---------------------------------------------------------------- 10, 11

Outcome determinism_and_wire() {
    auto cfg = desk_config(11);
    cfg.attack.iterations = 8;
    cfg.attack.num_spots = 10;
    const auto ds = make_dataset(cfg.seed, 10, 10, cfg.dataset.scene);
    const ToyDetector det;
    const Detector* one[] = {&det};
    auto run = [&] {
        const auto res = optimize_patch(ds.train, one, cfg.resolved_attack());
        const std::vector<Condition> c{{"adversarial", res.patch, 1.0}, {"adversarial", res.patch, 2.0}};
        return std::pair(res.state.history, run_condition_suite(ds.test, det, c, cfg.evaluation()));
    };
    const auto [h1, r1] = run();
    const auto [h2, r2] = run();
    double diff = 0;
    bool same_shape = h1.size() == h2.size() && r1.size() == r2.size();
    for (std::size_t i = 0; same_shape && i < h1.size(); ++i)
        diff = std::max({diff, std::abs(h1[i].loss.total - h2[i].loss.total), std::abs(h1[i].loss.tv - h2[i].loss.tv)});
    for (std::size_t i = 0; same_shape && i < r1.size(); ++i) {
        diff = std::max({diff, std::abs(r1[i].ap_clean_gt - r2[i].ap_clean_gt), std::abs(r1[i].ap_drop - r2[i].ap_drop)});
        same_shape = same_shape && r1[i].curve.points.size() == r2[i].curve.points.size();
        for (std::size_t k = 0; same_shape && k < r1[i].curve.points.size(); ++k)
            diff = std::max({diff, std::abs(r1[i].curve.points[k].recall - r2[i].curve.points[k].recall),
                             std::abs(r1[i].curve.points[k].precision - r2[i].curve.points[k].precision)});
    }

    std::vector<Detection> canned{{{1.0 / 3, 2.5, 40.125, 80.0 / 7}, 0.1 + 0.2, 1e-17, 0},
                                  {{0, 0, 1, 1}, 0.8765432109876543, 1.0, 3}};
    const std::string reply = wire::encode_response(1, canned);
    ExternalDetector peer("canned", std::make_unique<ChildProcessChannel>(
                                        "while read -r line; do printf '%s\\n' '" + reply + "'; done", 10000));
    const auto got = peer.detect(GrayImage(4, 4, 0.5));
    sort_by_objectness(canned);
    const bool wire_ok = got == canned;
    return {same_shape && diff <= 1e-12 && wire_ok,
            "max run-to-run diff " + num(diff) + (wire_ok ? ", canned reply bit-exact" : ", canned reply mismatch")};
}

Outcome end_to_end() {
    const fs::path dir = fs::temp_directory_path() / ("irpatch_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    const std::string cfg = (fs::path(IRPATCH_CONFIG_DIR) / "desk_experiment.json").string();
    const std::string manifest = (dir / "data" / "manifest.jsonl").string();
    auto args = [&](std::vector<std::string> a) {
        for (std::string s : {"-c", cfg.c_str(), "-o", dir.c_str(), "--set", "dataset.n_train=10", "--set",
                              "dataset.n_test=10", "--set", "attack.iterations=20"})
            a.push_back(s);
        return a;
    };
    const auto t0 = std::chrono::steady_clock::now();
    std::ostringstream out, err;
    for (const auto& a : {args({"gen-data"}), args({"optimize", "--data", manifest}), args({"evaluate", "--data", manifest}),
                          args({"export-board"})}) {
        if (const int code = cli::dispatch(a, out, err); code != cli::kExitOk)
            return {false, a.front() + " exited " + std::to_string(code) + ": " + err.str()};
    }
    const double t = seconds_since(t0);

    std::istringstream csv(io::read_text(dir / "loss_history.csv"));
    std::string line;
    std::getline(csv, line);
    std::vector<double> total;
    while (std::getline(csv, line)) {
        const auto a = line.find(','), b = line.find(',', a + 1);
        total.push_back(std::stod(line.substr(a + 1, b - a - 1)));
    }
    const bool artifacts = fs::exists(dir / "results.csv") && fs::exists(dir / "board.csv") && fs::exists(dir / "patch.pgm");
    fs::remove_all(dir);
    if (total.size() != 20) return {false, "loss history has " + std::to_string(total.size()) + " rows"};
    double first = 0, last = 0;
    for (int i = 0; i < 5; ++i) first += total[static_cast<std::size_t>(i)] / 5, last += total[total.size() - 1 - static_cast<std::size_t>(i)] / 5;
    return {artifacts && t < 60 && last < first,
            "pipeline " + num(t) + " s, smoothed loss " + num(first, 5) + " -> " + num(last, 5)};
}

}  // namespace

int main() {
    int failures = 0;
    auto report = [&](int id, const char* name, const Outcome& o, double secs) {
        std::printf("%s  %2d  %-26s %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), secs);
        std::fflush(stdout);
        failures += !o.pass;
    };
    auto timed = [&](int id, const char* name, const std::function<Outcome()>& f) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = f();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        report(id, name, o, seconds_since(t0));
    };

    timed(1, "rendering oracle", rendering_oracle);
    timed(2, "total variation oracle", tv_oracle);
    timed(3, "gradient checks", gradient_checks);
    timed(4, "average precision oracle", ap_oracle);

    std::vector<SeedResult> seeds;
    const auto t0 = std::chrono::steady_clock::now();
    std::string error;
    try {
        for (std::uint64_t s = 1; s <= 5; ++s) {
            seeds.push_back(run_seed(s));
            const auto& r = seeds.back();
            std::fprintf(stderr,
                         "seed %llu: adv %.1f blank %.1f noise %.1f | x0.5 %.1f x2 %.1f | M9 %.1f M36 %.1f | single %.1f ens %.1f\n",
                         static_cast<unsigned long long>(s), r.adv, r.blank, r.noise, r.half, r.twice, r.m9, r.m36, r.single,
                         r.ensemble);
        }
    } catch (const std::exception& e) {
        error = std::string("threw: ") + e.what();
    }
    const double sweep_secs = seconds_since(t0);
    auto tally = [&](const std::function<bool(const SeedResult&)>& ok, std::string what, double extra_limit = -1) {
        if (!error.empty()) return Outcome{false, error};
        int n = 0;
        for (const auto& r : seeds) n += ok(r);
        bool pass = n >= 4;
        if (extra_limit >= 0) {
            double t = 0;
            for (const auto& r : seeds) t += r.efficacy_seconds;
            pass = pass && t < extra_limit;
            what += ", " + num(t) + " s";
        }
        return Outcome{pass, std::to_string(n) + "/5 seeds " + what};
    };
    report(5, "attack efficacy", tally([](auto& r) { return r.adv > r.blank && r.adv > r.noise; }, "adversarial > blank, noise", 600),
           sweep_secs);
    report(6, "count sweep", tally([](auto& r) { return r.m36 >= r.m9; }, "M=36 >= M=9"), 0);
    report(7, "size sweep", tally([](auto& r) { return r.twice >= r.adv && r.adv >= r.half; }, "x2 >= x1 >= x0.5"), 0);
    report(8, "ensemble transfer", tally([](auto& r) { return r.ensemble >= r.single; }, "ensemble >= single on held-out"), 0);

    timed(9, "calibration roundtrip", calibration);
    timed(10, "determinism and wire", determinism_and_wire);
    timed(11, "end-to-end smoke", end_to_end);

    std::printf("%d of 11 criteria failed\n", failures);
    return failures ? 1 : 0;
}
