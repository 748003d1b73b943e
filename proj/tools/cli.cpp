#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "irpatch/attack.hpp"
#include "irpatch/board.hpp"
#include "irpatch/calibrate.hpp"
#include "irpatch/evaluate.hpp"
#include "irpatch/external_detector.hpp"
#include "irpatch/io.hpp"
#include "irpatch/plot.hpp"
#include "irpatch/scenegen.hpp"
#include "irpatch/toy_detector.hpp"

namespace irpatch::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kDataTag = 0x64617461u;
constexpr std::uint64_t kControlTag = 0x63746Cu;

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> sets;
    std::string output_dir;
};

json parse_value(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::exception&) {
        return text;
    }
}

ExperimentConfig resolve(const Common& c, std::ostream& err) {
    std::string path = c.config_path;
    if (path.empty())
        if (const char* env = std::getenv(kConfigEnv)) path = env;
    json j = json::object();
    if (!path.empty()) {
        try {
            j = json::parse(io::read_text(path));
        } catch (const json::exception& e) {
            throw ConfigError("'" + path + "': " + e.what());
        }
    }
    for (const auto& s : c.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key.path=value, got '" + s + "'");
        std::string ptr = "/" + s.substr(0, eq);
        std::replace(ptr.begin(), ptr.end(), '.', '/');
        try {
            j[json::json_pointer(ptr)] = parse_value(s.substr(eq + 1));
        } catch (const json::exception& e) {
            throw ConfigError("--set " + s + ": " + e.what());
        }
    }
    ExperimentConfig cfg;
    apply_json(cfg, j);
    if (c.seed) cfg.seed = *c.seed;
    if (!c.output_dir.empty()) cfg.output_dir = c.output_dir;
    cfg.validate();
    err << "irpatch: config " << (path.empty() ? std::string("<defaults>") : path) << ", seed " << cfg.seed << "\n";
    err << "irpatch: resolved " << to_json(cfg).dump() << "\n";
    return cfg;
}

Dataset load_data(const ExperimentConfig& cfg, const std::string& manifest_flag) {
    const std::string m = manifest_flag.empty() ? cfg.dataset.manifest : manifest_flag;
    if (!m.empty()) return io::read_manifest(m);
    Dataset ds = make_dataset(derive_seed(cfg.seed, {kDataTag}), cfg.dataset.n_train, cfg.dataset.n_test, cfg.dataset.scene);
    ds.train = filter_persons(std::move(ds.train));
    ds.test = filter_persons(std::move(ds.test));
    return ds;
}

std::vector<std::unique_ptr<Detector>> make_detectors(const std::vector<DetectorSpec>& specs) {
    std::vector<std::unique_ptr<Detector>> out;
    for (const auto& s : specs) out.push_back(make_detector(s));
    return out;
}

std::vector<const Detector*> views(const std::vector<std::unique_ptr<Detector>>& ds) {
    std::vector<const Detector*> v;
    for (const auto& d : ds) v.push_back(d.get());
    return v;
}

double smoothed(const std::vector<LossRecord>& h, bool tail, int window = 5) {
    const int n = std::min<int>(window, static_cast<int>(h.size()));
    if (n == 0) return 0.0;
    double s = 0;
    for (int i = 0; i < n; ++i) s += h[tail ? h.size() - 1 - static_cast<std::size_t>(i) : static_cast<std::size_t>(i)].loss.total;
    return s / n;
}

io::PatchFile to_patch_file(const AttackResult& r, const AttackConfig& a) {
    io::PatchFile f;
    f.side = a.patch_side;
    f.mode = a.mode;
    if (a.mode == PatchMode::gaussian)
        f.params = r.state.gaussian;
    else
        f.pixels = r.patch;
    return f;
}

AttackResult run_attack(const Dataset& ds, const std::vector<const Detector*>& dets, const AttackConfig& a,
                        const fs::path& out_dir, std::ostream& err) {
    AttackState last;
    try {
        return optimize_patch(ds.train, dets, a, [&](const AttackState& st) { last = st; });
    } catch (const NonFiniteLossError& e) {
        json diag{{"error", e.what()}, {"iteration", e.iteration()}, {"history", json::array()}};
        for (const auto& r : last.history) diag["history"].push_back({r.iteration, r.loss.total, r.loss.objectness, r.loss.tv});
        if (a.mode == PatchMode::gaussian) {
            io::PatchFile f;
            f.side = a.patch_side;
            f.params = last.gaussian;
            diag["params"] = io::to_json(f);
        }
        io::write_text(out_dir / "diagnostic_state.json", diag.dump(2) + "\n");
        err << "irpatch: diagnostic state written to " << (out_dir / "diagnostic_state.json").string() << "\n";
        throw;
    }
}

int cmd_fit_bulb(const Common& c, const std::string& profile, const std::string& write_config, std::ostream& out,
                 std::ostream& err) {
    const auto cfg = resolve(c, err);
    const auto samples = io::read_profile(profile);
    const auto fit = fit_bulb_profile(samples);
    const double s = temperature_to_intensity(fit.amplitude, cfg.span);
    if (!fit.converged) err << "irpatch: warning: bulb fit hit the iteration cap; reporting the best parameters found\n";
    const json j{{"amplitude_c", fit.amplitude}, {"center_px", fit.center}, {"sigma_px", fit.sigma},
                 {"baseline_c", fit.baseline},   {"rmse_c", fit.rmse},       {"converged", fit.converged},
                 {"s", s},                       {"camera_span", {cfg.span.t_min, cfg.span.t_max}}};
    out << j.dump(2) << "\n";
    if (!write_config.empty()) {
        ExperimentConfig updated = cfg;
        updated.attack.amplitude = s;
        updated.attack.sigma = fit.sigma;
        io::write_text(write_config, to_json(updated).dump(2) + "\n");
        err << "irpatch: wrote config with fitted s and sigma to " << write_config << "\n";
    }
    return kExitOk;
}

int cmd_gen_data(const Common& c, std::string out_path, std::ostream& out, std::ostream& err) {
    const auto cfg = resolve(c, err);
    if (out_path.empty()) out_path = (fs::path(cfg.output_dir) / "data").string();
    const Dataset ds =
        make_dataset(derive_seed(cfg.seed, {kDataTag}), cfg.dataset.n_train, cfg.dataset.n_test, cfg.dataset.scene);
    const fs::path manifest = fs::path(out_path) / "manifest.jsonl";
    fs::create_directories(out_path);
    io::write_manifest(manifest, ds);
    int crowded = 0;
    for (const auto* split : {&ds.train, &ds.test})
        for (const auto& a : *split) crowded += a.overcrowded;
    if (crowded > 0) err << "irpatch: warning: " << crowded << " scenes hold fewer persons than requested\n";
    out << "wrote " << ds.train.size() << " train and " << ds.test.size() << " test scenes to " << manifest.string() << "\n";
    return kExitOk;
}

int cmd_optimize(const Common& c, const std::string& data, std::ostream& out, std::ostream& err) {
    const auto cfg = resolve(c, err);
    const fs::path dir = cfg.output_dir;
    fs::create_directories(dir);
    io::write_text(dir / "resolved_config.json", to_json(cfg).dump(2) + "\n");
    const Dataset ds = load_data(cfg, data);
    const auto dets = make_detectors(cfg.detectors);
    const AttackConfig a = cfg.resolved_attack();
    const auto res = run_attack(ds, views(dets), a, dir, err);

    io::write_patch_file(dir / "patch.json", to_patch_file(res, a));
    io::write_pgm(dir / "patch.pgm", res.patch.pixels);
    io::write_text(dir / "loss_history.csv", io::loss_history_csv(res.state.history));
    out << "optimized " << a.iterations << " iterations on " << ds.train.size() << " scenes; smoothed loss "
        << io::fmt(smoothed(res.state.history, false)) << " -> " << io::fmt(smoothed(res.state.history, true)) << "\n";
    out << "wrote " << (dir / "patch.json").string() << ", patch.pgm, loss_history.csv\n";
    return kExitOk;
}

int cmd_evaluate(const Common& c, const std::string& data, std::string patch_path, bool sweep_size, bool sweep_count,
                 std::ostream& out, std::ostream& err) {
    const auto cfg = resolve(c, err);
    const fs::path dir = cfg.output_dir;
    fs::create_directories(dir);
    if (patch_path.empty()) patch_path = (dir / "patch.json").string();
    const Dataset ds = load_data(cfg, data);
    const auto eval_det = make_detector(cfg.eval_detector.value_or(cfg.detectors.front()));
    const auto pf = io::read_patch_file(patch_path);
    const Patch adv = io::render(pf);

    Rng ctrl(derive_seed(cfg.seed, {kControlTag}));
    std::vector<Condition> conds;
    conds.push_back({"none", std::nullopt, 1.0});
    conds.push_back({"adversarial", adv, 1.0});
    conds.push_back({"blank", make_control_patch(ControlKind::blank, adv.side(), ctrl), 1.0});
    conds.push_back({"noise", make_control_patch(ControlKind::noise, adv.side(), ctrl), 1.0});
    if (sweep_size)
        for (double s : cfg.sweep_scales)
            if (s != 1.0) conds.push_back({"adversarial", adv, s});
    if (sweep_count) {
        const auto dets = make_detectors(cfg.detectors);
        for (int m : cfg.sweep_counts) {
            AttackConfig a = cfg.resolved_attack();
            a.num_spots = m;
            a.mode = PatchMode::gaussian;
            err << "irpatch: count sweep, optimizing M=" << m << "\n";
            const auto r = run_attack(ds, views(dets), a, dir, err);
            conds.push_back({"M=" + std::to_string(m), r.patch, 1.0});
        }
    }
    const auto reports = run_condition_suite(ds.test, *eval_det, conds, cfg.evaluation());
    io::write_text(dir / "results.csv", io::results_csv(reports));
    io::write_text(dir / "pr_points.csv", io::pr_points_csv(reports));
    out << "condition,scale,ap_clean_gt,ap_drop\n";
    for (const auto& r : reports) out << r.condition << "," << io::fmt(r.scale) << "," << io::fmt(r.ap_clean_gt) << "," << io::fmt(r.ap_drop) << "\n";
    out << "wrote " << (dir / "results.csv").string() << " and pr_points.csv\n";
    return kExitOk;
}

int cmd_render(const Common& c, std::string patch_path, std::string out_path, std::ostream& out, std::ostream& err) {
    const auto cfg = resolve(c, err);
    if (patch_path.empty()) patch_path = (fs::path(cfg.output_dir) / "patch.json").string();
    if (out_path.empty()) out_path = (fs::path(cfg.output_dir) / "render.pgm").string();
    const Patch p = io::render(io::read_patch_file(patch_path));
    io::write_pgm(out_path, p.pixels);
    out << "rendered " << p.side() << "x" << p.side() << " patch to " << out_path << "\n";
    return kExitOk;
}

int cmd_export_board(const Common& c, std::string patch_path, std::string out_path, std::ostream& out, std::ostream& err) {
    const auto cfg = resolve(c, err);
    if (patch_path.empty()) patch_path = (fs::path(cfg.output_dir) / "patch.json").string();
    if (out_path.empty()) out_path = (fs::path(cfg.output_dir) / "board.csv").string();
    const auto pf = io::read_patch_file(patch_path);
    if (pf.mode != PatchMode::gaussian) throw ConfigError("export-board needs a gaussian-mode patch file");
    const auto layout = export_board(pf.params, pf.side, cfg.board_cm, cfg.min_spacing_cm);
    io::write_text(out_path, io::board_table(layout));
    for (const auto& w : layout.warnings) err << "irpatch: warning: " << w << "\n";
    out << "wrote " << layout.bulbs.size() << " bulbs on a " << io::fmt(layout.board_cm) << " cm board to " << out_path
        << " (min spacing " << io::fmt(layout.min_spacing_cm) << " cm, " << layout.warnings.size() << " warnings)\n";
    return kExitOk;
}

int cmd_plot_pr(const Common& c, std::string points, std::string out_path, int size, std::ostream& out, std::ostream& err) {
    const auto cfg = resolve(c, err);
    if (points.empty()) points = (fs::path(cfg.output_dir) / "pr_points.csv").string();
    if (out_path.empty()) out_path = (fs::path(cfg.output_dir) / "pr.pgm").string();
    const auto series = io::read_pr_points(points);
    io::write_pgm(out_path, plot_pr_curves(series, size));
    out << "plotted " << series.size() << " PR curves to " << out_path << "\n";
    return kExitOk;
}

}  // namespace

std::unique_ptr<Detector> make_detector(const DetectorSpec& spec) {
    if (spec.type == "toy") return std::make_unique<ToyDetector>(spec.toy, spec.name);
    if (spec.type != "external") throw ConfigError("unknown detector type '" + spec.type + "'");
    try {
        std::unique_ptr<LineChannel> ch;
        if (!spec.command.empty())
            ch = std::make_unique<ChildProcessChannel>(spec.command);
        else
            ch = std::make_unique<TcpChannel>(spec.host, spec.port);
        return std::make_unique<ExternalDetector>(spec.name, std::move(ch));
    } catch (const LineChannel::Failure& e) {
        throw TransportError(0, "detector '" + spec.name + "': " + e.what());
    }
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Thermal-infrared Gaussian-spot adversarial patch toolkit", "irpatch"};
    app.require_subcommand(1);
    app.fallthrough();
    Common common;
    app.add_option("-c,--config", common.config_path, std::string("Experiment config (JSON); defaults to $") + kConfigEnv);
    app.add_option("--seed", common.seed, "Seed for all randomness");
    app.add_option("--set", common.sets, "Override a config key, e.g. --set attack.iterations=20");
    app.add_option("-o,--output-dir", common.output_dir, "Output directory");

    std::string profile, write_config, data, patch, out_path, points;
    bool sweep_size = false, sweep_count = false;
    int plot_size = 400;

    auto* fit = app.add_subcommand("fit-bulb", "Fit a Gaussian to a bulb temperature profile");
    fit->add_option("--profile", profile, "Two-column table: position_px temperature_C")->required();
    fit->add_option("--write-config", write_config, "Write the config with the fitted s and sigma here");

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic scene dataset and manifest");
    gen->add_option("--out", out_path, "Dataset directory (default <output-dir>/data)");

    auto* opt = app.add_subcommand("optimize", "Optimize a patch against the configured detectors");
    opt->add_option("--data", data, "Dataset manifest (default: config, else generated)");

    auto* ev = app.add_subcommand("evaluate", "Evaluate a patch against clean-run ground truth");
    ev->add_option("--data", data, "Dataset manifest (default: config, else generated)");
    ev->add_option("--patch", patch, "Patch parameter file (default <output-dir>/patch.json)");
    ev->add_flag("--sweep-size", sweep_size, "Also evaluate the patch at each sweep scale");
    ev->add_flag("--sweep-count", sweep_count, "Also optimize and evaluate one patch per sweep spot count");

    auto* ren = app.add_subcommand("render", "Render a patch parameter file to a PGM image");
    ren->add_option("--patch", patch, "Patch parameter file (default <output-dir>/patch.json)");
    ren->add_option("--out", out_path, "Output image (default <output-dir>/render.pgm)");

    auto* board = app.add_subcommand("export-board", "Export the spot layout as a physical board plan");
    board->add_option("--patch", patch, "Patch parameter file (default <output-dir>/patch.json)");
    board->add_option("--out", out_path, "Output table (default <output-dir>/board.csv)");

    auto* plot = app.add_subcommand("plot-pr", "Plot PR curves from a PR point table");
    plot->add_option("--points", points, "PR point table (default <output-dir>/pr_points.csv)");
    plot->add_option("--out", out_path, "Output image (default <output-dir>/pr.pgm)");
    plot->add_option("--size", plot_size, "Image side in pixels")->check(CLI::Range(64, 4096));

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "irpatch: " << e.what() << "\n" << app.help();
        return kExitUsage;
    }

    try {
        if (fit->parsed()) return cmd_fit_bulb(common, profile, write_config, out, err);
        if (gen->parsed()) return cmd_gen_data(common, out_path, out, err);
        if (opt->parsed()) return cmd_optimize(common, data, out, err);
        if (ev->parsed()) return cmd_evaluate(common, data, patch, sweep_size, sweep_count, out, err);
        if (ren->parsed()) return cmd_render(common, patch, out_path, out, err);
        if (board->parsed()) return cmd_export_board(common, patch, out_path, out, err);
        if (plot->parsed()) return cmd_plot_pr(common, points, out_path, plot_size, out, err);
    } catch (const ConfigError& e) {
        err << "irpatch: configuration error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const Error& e) {
        err << "irpatch: error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        err << "irpatch: error: " << e.what() << "\n";
        return kExitValidation;
    }
    return kExitUsage;
}

}  // namespace irpatch::cli
