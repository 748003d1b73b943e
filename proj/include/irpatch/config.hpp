#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "irpatch/attack.hpp"
#include "irpatch/calibrate.hpp"
#include "irpatch/evaluate.hpp"
#include "irpatch/io.hpp"
#include "irpatch/scenegen.hpp"
#include "irpatch/toy_detector.hpp"

namespace irpatch {

/// A detector to build: the builtin toy scorer, or an external peer reached through a
/// child-process command or a TCP endpoint.
struct DetectorSpec {
    std::string type = "toy";  ///< "toy" | "external"
    std::string name = "toy";
    ToyTemplateConfig toy;
    std::string command;
    std::string host;
    int port = 0;
};

struct DatasetConfig {
    std::string manifest;  ///< empty: generate in memory
    int n_train = 50;
    int n_test = 20;
    SceneConfig scene;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    AttackConfig attack;
    std::vector<DetectorSpec> detectors{DetectorSpec{}};
    std::optional<DetectorSpec> eval_detector;  ///< defaults to the first attack detector
    double iou_threshold = 0.5;
    double gt_threshold = 0.5;
    DatasetConfig dataset;
    std::vector<int> sweep_counts{9, 15, 22, 25, 36};
    std::vector<double> sweep_scales = size_sweep_scales();
    TemperatureSpan span;
    double board_cm = 35.0;
    double min_spacing_cm = 1.0;
    std::string output_dir = "out";

    /// The attack config with the experiment seed applied.
    AttackConfig resolved_attack() const {
        AttackConfig a = attack;
        a.seed = seed;
        return a;
    }

    EvalConfig evaluation() const {
        EvalConfig e;
        e.transforms = attack.transforms;
        e.placement = attack.placement;
        e.seed = derive_seed(seed, {0x6576u});
        e.iou_threshold = iou_threshold;
        e.gt_threshold = gt_threshold;
        e.target_class = attack.target_class;
        return e;
    }

    void validate() const {
        attack.validate();
        if (detectors.empty()) throw ConfigError("at least one detector is required");
        auto check = [](const DetectorSpec& d) {
            if (d.type == "toy") {
                d.toy.validate();
            } else if (d.type == "external") {
                if (d.command.empty() == d.host.empty())
                    throw ConfigError("external detector '" + d.name + "' needs exactly one of command or host");
                if (!d.host.empty() && (d.port < 1 || d.port > 65535))
                    throw ConfigError("external detector '" + d.name + "' needs a port in 1..65535");
            } else {
                throw ConfigError("unknown detector type '" + d.type + "'");
            }
        };
        for (const auto& d : detectors) check(d);
        if (eval_detector) check(*eval_detector);
        if (!(iou_threshold > 0 && iou_threshold <= 1)) throw ConfigError("iou_threshold must lie in (0,1]");
        if (!(gt_threshold >= 0 && gt_threshold < 1)) throw ConfigError("gt_threshold must lie in [0,1)");
        if (dataset.n_train < 0 || dataset.n_test < 0) throw ConfigError("dataset sizes must be >= 0");
        dataset.scene.validate();
        for (int m : sweep_counts)
            if (m < 0) throw ConfigError("sweep counts must be >= 0");
        for (double s : sweep_scales)
            if (!(s > 0)) throw ConfigError("sweep scales must be > 0");
        if (!(span.t_max > span.t_min)) throw ConfigError("camera span must satisfy t_max > t_min");
        if (!(board_cm > 0) || !(min_spacing_cm >= 0)) throw ConfigError("invalid board geometry");
    }
};

namespace detail {

using nlohmann::json;

/// Reads fields of one JSON object and rejects keys nobody asked for.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(where_ + "." + key + ": wrong type");
        }
    }

    void interval(const char* key, Interval& out) {
        std::vector<double> v{out.lo, out.hi};
        get(key, v);
        if (v.size() != 2) throw ConfigError(where_ + "." + key + ": expected [lo, hi]");
        out = {v[0], v[1]};
    }

    const json* child(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    std::string path(const char* key) const { return where_ + "." + key; }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw ConfigError(where_ + ": unknown key '" + k + "'");
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

inline void read_toy(const json& j, const std::string& where, ToyTemplateConfig& t) {
    ObjectReader r(j, where);
    r.get("anchor_heights", t.anchor_heights);
    r.get("aspect", t.aspect);
    r.get("stride_fraction", t.stride_fraction);
    r.get("spread_u", t.spread_u);
    r.get("spread_v", t.spread_v);
    r.get("slope", t.slope);
    r.get("bias", t.bias);
    r.get("score_threshold", t.score_threshold);
    r.get("nms_iou", t.nms_iou);
    r.get("nms_containment", t.nms_containment);
    r.finish();
}

inline DetectorSpec read_detector(const json& j, const std::string& where) {
    ObjectReader r(j, where);
    DetectorSpec d;
    r.get("type", d.type);
    d.name = d.type;
    r.get("name", d.name);
    r.get("command", d.command);
    r.get("host", d.host);
    r.get("port", d.port);
    if (const json* t = r.child("template")) read_toy(*t, r.path("template"), d.toy);
    r.finish();
    return d;
}

template <class E>
E read_enum(ObjectReader& r, const char* key, E current, std::initializer_list<std::pair<const char*, E>> names) {
    std::string s;
    for (const auto& [n, v] : names)
        if (v == current) s = n;
    r.get(key, s);
    for (const auto& [n, v] : names)
        if (s == n) return v;
    throw ConfigError(r.path(key) + ": unknown value '" + s + "'");
}

}  // namespace detail

/// Applies the keys present in `j` on top of `cfg`. Unknown keys are rejected.
inline void apply_json(ExperimentConfig& cfg, const nlohmann::json& j) {
    using detail::ObjectReader;
    ObjectReader top(j, "config");
    top.get("seed", cfg.seed);
    top.get("output_dir", cfg.output_dir);
    top.get("iou_threshold", cfg.iou_threshold);
    top.get("gt_threshold", cfg.gt_threshold);
    top.get("sweep_counts", cfg.sweep_counts);
    top.get("sweep_scales", cfg.sweep_scales);
    top.get("board_cm", cfg.board_cm);
    top.get("min_spacing_cm", cfg.min_spacing_cm);
    {
        Interval span{cfg.span.t_min, cfg.span.t_max};
        top.interval("camera_span", span);
        cfg.span = {span.lo, span.hi};
    }

    if (const auto* a = top.child("attack")) {
        ObjectReader r(*a, "config.attack");
        auto& c = cfg.attack;
        c.mode = detail::read_enum(r, "mode", c.mode, {{"gaussian", PatchMode::gaussian}, {"pixel", PatchMode::pixel}});
        c.optimizer = detail::read_enum(r, "optimizer", c.optimizer,
                                        {{"sgd-momentum-fd", Optimizer::sgd_momentum_fd},
                                         {"nelder-mead", Optimizer::nelder_mead},
                                         {"analytic-sgd", Optimizer::analytic_sgd}});
        c.init = detail::read_enum(r, "init", c.init, {{"uniform", InitScheme::uniform}, {"grid", InitScheme::grid}});
        c.tv_normalization = detail::read_enum(r, "tv_normalization", c.tv_normalization,
                                               {{"sum", TvNormalization::sum}, {"per-side", TvNormalization::per_side}});
        r.get("tv_weight", c.tv_weight);
        r.get("batch_size", c.batch_size);
        r.get("iterations", c.iterations);
        if (const auto* lr = r.child("learning_rate")) {
            if (lr->is_null())
                c.learning_rate.reset();
            else if (lr->is_number())
                c.learning_rate = lr->get<double>();
            else
                throw ConfigError("config.attack.learning_rate: wrong type");
        }
        r.get("momentum", c.momentum);
        r.get("eot_draws", c.eot_draws);
        r.get("fd_step", c.fd_step);
        r.get("nm_step", c.nm_step);
        r.get("num_spots", c.num_spots);
        r.get("patch_side", c.patch_side);
        r.get("init_jitter", c.init_jitter);
        r.get("amplitude", c.amplitude);
        r.get("sigma", c.sigma);
        r.get("background", c.background);
        r.get("target_class", c.target_class);
        r.finish();
    }
    if (const auto* t = top.child("transforms")) {
        ObjectReader r(*t, "config.transforms");
        auto& c = cfg.attack.transforms;
        r.get("max_angle_deg", c.max_angle_deg);
        r.interval("translate", c.translate);
        r.interval("scale", c.scale);
        r.interval("brightness", c.brightness);
        r.interval("contrast", c.contrast);
        r.get("noise_amplitude", c.noise_amplitude);
        r.finish();
    }
    if (const auto* p = top.child("placement")) {
        ObjectReader r(*p, "config.placement");
        auto& c = cfg.attack.placement;
        r.get("size_fraction", c.size_fraction);
        r.get("anchor_y_fraction", c.anchor_y_fraction);
        r.get("scale", c.scale);
        r.finish();
    }
    if (const auto* d = top.child("detectors")) {
        if (!d->is_array()) throw ConfigError("config.detectors: expected a list");
        cfg.detectors.clear();
        for (std::size_t i = 0; i < d->size(); ++i)
            cfg.detectors.push_back(detail::read_detector((*d)[i], "config.detectors[" + std::to_string(i) + "]"));
    }
    if (const auto* d = top.child("eval_detector"))
        cfg.eval_detector = d->is_null() ? std::nullopt : std::optional(detail::read_detector(*d, "config.eval_detector"));
    if (const auto* d = top.child("dataset")) {
        ObjectReader r(*d, "config.dataset");
        r.get("manifest", cfg.dataset.manifest);
        r.get("n_train", cfg.dataset.n_train);
        r.get("n_test", cfg.dataset.n_test);
        if (const auto* s = r.child("scene")) {
            ObjectReader sr(*s, "config.dataset.scene");
            auto& c = cfg.dataset.scene;
            sr.get("height", c.height);
            sr.get("width", c.width);
            sr.get("min_persons", c.min_persons);
            sr.get("max_persons", c.max_persons);
            sr.get("min_person_height", c.min_person_height);
            sr.get("max_person_height", c.max_person_height);
            sr.get("aspect", c.aspect);
            sr.get("background", c.background);
            sr.get("texture_noise", c.texture_noise);
            sr.get("person_intensity", c.person_intensity);
            sr.get("spread_u", c.spread_u);
            sr.get("spread_v", c.spread_v);
            sr.get("spread_jitter", c.spread_jitter);
            sr.get("max_retries", c.max_retries);
            sr.finish();
        }
        r.finish();
    }
    top.finish();
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    ExperimentConfig cfg;
    try {
        apply_json(cfg, nlohmann::json::parse(io::read_text(path)));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("'" + path.string() + "': " + e.what());
    }
    return cfg;
}

namespace detail {

inline json to_json(const ToyTemplateConfig& t) {
    return {{"anchor_heights", t.anchor_heights}, {"aspect", t.aspect},   {"stride_fraction", t.stride_fraction},
            {"spread_u", t.spread_u},             {"spread_v", t.spread_v}, {"slope", t.slope},
            {"bias", t.bias},                     {"score_threshold", t.score_threshold}, {"nms_iou", t.nms_iou},
            {"nms_containment", t.nms_containment}};
}

inline json to_json(const DetectorSpec& d) {
    json j{{"type", d.type}, {"name", d.name}};
    if (d.type == "toy") j["template"] = to_json(d.toy);
    if (!d.command.empty()) j["command"] = d.command;
    if (!d.host.empty()) j["host"] = d.host, j["port"] = d.port;
    return j;
}

}  // namespace detail

/// The fully resolved configuration, in the same shape load_config accepts.
inline nlohmann::json to_json(const ExperimentConfig& cfg) {
    using nlohmann::json;
    const auto& a = cfg.attack;
    const auto& t = a.transforms;
    const auto& s = cfg.dataset.scene;
    json j;
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir;
    j["iou_threshold"] = cfg.iou_threshold;
    j["gt_threshold"] = cfg.gt_threshold;
    j["sweep_counts"] = cfg.sweep_counts;
    j["sweep_scales"] = cfg.sweep_scales;
    j["board_cm"] = cfg.board_cm;
    j["min_spacing_cm"] = cfg.min_spacing_cm;
    j["camera_span"] = {cfg.span.t_min, cfg.span.t_max};
    j["attack"] = {{"mode", to_string(a.mode)},
                   {"optimizer", to_string(a.optimizer)},
                   {"init", to_string(a.init)},
                   {"tv_normalization", to_string(a.tv_normalization)},
                   {"tv_weight", a.tv_weight},
                   {"batch_size", a.batch_size},
                   {"iterations", a.iterations},
                   {"learning_rate", a.lr()},
                   {"momentum", a.momentum},
                   {"eot_draws", a.eot_draws},
                   {"fd_step", a.fd_step},
                   {"nm_step", a.nm_step},
                   {"num_spots", a.num_spots},
                   {"patch_side", a.patch_side},
                   {"init_jitter", a.init_jitter},
                   {"amplitude", a.amplitude},
                   {"sigma", a.sigma},
                   {"background", a.background},
                   {"target_class", a.target_class}};
    j["transforms"] = {{"max_angle_deg", t.max_angle_deg},
                       {"translate", {t.translate.lo, t.translate.hi}},
                       {"scale", {t.scale.lo, t.scale.hi}},
                       {"brightness", {t.brightness.lo, t.brightness.hi}},
                       {"contrast", {t.contrast.lo, t.contrast.hi}},
                       {"noise_amplitude", t.noise_amplitude}};
    j["placement"] = {{"size_fraction", a.placement.size_fraction},
                      {"anchor_y_fraction", a.placement.anchor_y_fraction},
                      {"scale", a.placement.scale}};
    j["detectors"] = json::array();
    for (const auto& d : cfg.detectors) j["detectors"].push_back(detail::to_json(d));
    j["eval_detector"] = cfg.eval_detector ? detail::to_json(*cfg.eval_detector) : json(nullptr);
    j["dataset"] = {{"manifest", cfg.dataset.manifest},
                    {"n_train", cfg.dataset.n_train},
                    {"n_test", cfg.dataset.n_test},
                    {"scene",
                     {{"height", s.height},
                      {"width", s.width},
                      {"min_persons", s.min_persons},
                      {"max_persons", s.max_persons},
                      {"min_person_height", s.min_person_height},
                      {"max_person_height", s.max_person_height},
                      {"aspect", s.aspect},
                      {"background", s.background},
                      {"texture_noise", s.texture_noise},
                      {"person_intensity", s.person_intensity},
                      {"spread_u", s.spread_u},
                      {"spread_v", s.spread_v},
                      {"spread_jitter", s.spread_jitter},
                      {"max_retries", s.max_retries}}}};
    return j;
}

}  // namespace irpatch
