#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "irpatch/attack.hpp"
#include "irpatch/board.hpp"
#include "irpatch/calibrate.hpp"
#include "irpatch/evaluate.hpp"
#include "irpatch/grid.hpp"
#include "irpatch/imaging.hpp"
#include "irpatch/scenegen.hpp"

namespace irpatch::io {

namespace fs = std::filesystem;
using nlohmann::json;

/// Shortest decimal text that parses back to the same double.
inline std::string fmt(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw ConfigError("write failed for '" + path.string() + "'");
}

// ---- images ---------------------------------------------------------------

inline unsigned char to_byte(double v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

/// Binary 8-bit PGM; [0,1] maps linearly to [0,255].
inline void write_pgm(const fs::path& path, const Grid& img) {
    std::string data = "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
    data.reserve(data.size() + img.size());
    for (double v : img.values()) data.push_back(static_cast<char>(to_byte(v)));
    write_text(path, data);
}

/// Reads P5 (8 or 16 bit) and P2 PGM files into [0,1].
inline GrayImage read_pgm(const fs::path& path) {
    const std::string s = read_text(path);
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < s.size()) {
            if (s[pos] == '#') {
                while (pos < s.size() && s[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(s[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
        const std::size_t start = pos;
        while (pos < s.size() && !std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
        return s.substr(start, pos - start);
    };
    auto number = [&](const char* what) {
        const std::string t = token();
        int v = 0;
        const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
        if (r.ec != std::errc{} || r.ptr != t.data() + t.size() || v < 0)
            throw ConfigError("'" + path.string() + "': bad PGM " + what);
        return v;
    };
    const std::string magic = token();
    if (magic != "P5" && magic != "P2") throw ConfigError("'" + path.string() + "' is not a PGM file");
    const int w = number("width"), h = number("height"), maxval = number("maxval");
    if (w < 1 || h < 1 || maxval < 1 || maxval > 65535) throw ConfigError("'" + path.string() + "': bad PGM header");
    GrayImage img(h, w);
    auto px = img.values();
    if (magic == "P2") {
        for (auto& v : px) v = std::min(1.0, static_cast<double>(number("sample")) / maxval);
        return img;
    }
    ++pos;
    const std::size_t bytes = maxval < 256 ? 1 : 2;
    if (s.size() < pos + px.size() * bytes) throw ConfigError("'" + path.string() + "': truncated PGM data");
    for (std::size_t i = 0; i < px.size(); ++i) {
        unsigned v = static_cast<unsigned char>(s[pos + i * bytes]);
        if (bytes == 2) v = (v << 8) | static_cast<unsigned char>(s[pos + i * 2 + 1]);
        px[i] = std::min(1.0, static_cast<double>(v) / maxval);
    }
    return img;
}

// ---- patch parameter files --------------------------------------------------

struct PatchFile {
    int side = 300;
    PatchMode mode = PatchMode::gaussian;
    GaussianPatchParams params;  ///< gaussian mode
    Patch pixels;                ///< pixel mode
};

inline json to_json(const PatchFile& f) {
    json j;
    j["side_px"] = f.side;
    j["mode"] = to_string(f.mode);
    if (f.mode == PatchMode::gaussian) {
        j["M"] = f.params.num_spots();
        j["centers"] = json::array();
        for (const auto& c : f.params.centers) j["centers"].push_back({c.x, c.y});
        j["s"] = f.params.amplitude;
        j["sigma"] = f.params.sigma;
        j["mu"] = f.params.background;
    } else {
        j["pixels"] = std::vector<double>(f.pixels.pixels.values().begin(), f.pixels.pixels.values().end());
    }
    return j;
}

inline PatchFile patch_file_from_json(const json& j) {
    try {
        PatchFile f;
        f.side = j.at("side_px").get<int>();
        const auto mode = j.at("mode").get<std::string>();
        if (mode == "gaussian") {
            f.mode = PatchMode::gaussian;
            for (const auto& c : j.at("centers")) {
                if (!c.is_array() || c.size() != 2) throw ConfigError("each center must be [x, y]");
                f.params.centers.push_back({c[0].get<double>(), c[1].get<double>()});
            }
            if (j.contains("M") && j["M"].get<int>() != f.params.num_spots())
                throw ConfigError("M does not match the number of centers");
            f.params.amplitude = j.at("s").get<double>();
            f.params.sigma = j.at("sigma").get<double>();
            f.params.background = j.at("mu").get<double>();
            try {
                validate(f.params, f.side);
            } catch (const ContractError& e) {
                throw ConfigError(e.what());
            }
        } else if (mode == "pixel") {
            f.mode = PatchMode::pixel;
            const auto v = j.at("pixels").get<std::vector<double>>();
            if (f.side < 1 || v.size() != static_cast<std::size_t>(f.side) * static_cast<std::size_t>(f.side))
                throw ConfigError("pixel patch needs side_px^2 values");
            Grid g(f.side, f.side);
            std::copy(v.begin(), v.end(), g.values().begin());
            if (!in_unit_range(g)) throw ConfigError("pixel patch values must lie in [0,1]");
            f.pixels = Patch::from_grid(std::move(g), PatchMode::pixel);
        } else {
            throw ConfigError("unknown patch mode '" + mode + "'");
        }
        return f;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("patch file: ") + e.what());
    }
}

inline void write_patch_file(const fs::path& path, const PatchFile& f) { write_text(path, to_json(f).dump(2) + "\n"); }

inline PatchFile read_patch_file(const fs::path& path) {
    try {
        return patch_file_from_json(json::parse(read_text(path)));
    } catch (const json::exception& e) {
        throw ConfigError("'" + path.string() + "': " + e.what());
    }
}

inline Patch render(const PatchFile& f) {
    return f.mode == PatchMode::gaussian ? render_gaussian_patch(f.params, f.side) : f.pixels;
}

// ---- dataset manifests ------------------------------------------------------

/// One JSON record per line: {"path", "split", "boxes": [{"x","y","w","h"}]}.
/// Image paths are relative to the manifest's directory.
inline void write_manifest(const fs::path& manifest, const Dataset& ds) {
    const fs::path dir = manifest.parent_path();
    std::string out;
    auto emit = [&](const std::vector<AnnotatedImage>& split, const std::string& tag) {
        for (std::size_t i = 0; i < split.size(); ++i) {
            const std::string rel = "images/" + tag + "_" + std::to_string(i) + ".pgm";
            write_pgm(dir / rel, split[i].image);
            json rec{{"path", rel}, {"split", tag}, {"boxes", json::array()}};
            for (const auto& b : split[i].persons) rec["boxes"].push_back({{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}});
            if (split[i].overcrowded) rec["overcrowded"] = true;
            out += rec.dump() + "\n";
        }
    };
    emit(ds.train, "train");
    emit(ds.test, "test");
    write_text(manifest, out);
}

/// Loads a manifest and applies the person-height filter: boxes of height <= 120 px are
/// dropped, then images left without persons.
inline Dataset read_manifest(const fs::path& manifest) {
    const fs::path dir = manifest.parent_path();
    std::istringstream in(read_text(manifest));
    std::string line;
    int lineno = 0;
    Dataset ds;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json rec = json::parse(line);
            AnnotatedImage a;
            a.image = read_pgm(dir / rec.at("path").get<std::string>());
            const auto split = rec.at("split").get<std::string>();
            if (split != "train" && split != "test") throw ConfigError("split must be 'train' or 'test'");
            a.split = split == "train" ? Split::train : Split::test;
            for (const auto& b : rec.at("boxes")) {
                const BBox box{b.at("x").get<double>(), b.at("y").get<double>(), b.at("w").get<double>(),
                               b.at("h").get<double>()};
                if (!box.valid()) throw ConfigError("box with non-positive size");
                a.persons.push_back(box);
            }
            a.overcrowded = rec.value("overcrowded", false);
            (a.split == Split::train ? ds.train : ds.test).push_back(std::move(a));
        } catch (const json::exception& e) {
            throw ConfigError(manifest.string() + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const ConfigError& e) {
            throw ConfigError(manifest.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    ds.train = filter_persons(std::move(ds.train));
    ds.test = filter_persons(std::move(ds.test));
    return ds;
}

// ---- tables -----------------------------------------------------------------

inline std::string loss_history_csv(const std::vector<LossRecord>& h) {
    std::string s = "iteration,L,L_obj,L_tv\n";
    for (const auto& r : h)
        s += std::to_string(r.iteration) + "," + fmt(r.loss.total) + "," + fmt(r.loss.objectness) + "," + fmt(r.loss.tv) + "\n";
    return s;
}

inline std::string results_csv(const std::vector<APReport>& reports) {
    std::string s = "condition,scale,ap_clean_gt,ap_drop,ap_annotations,images,gt_boxes,annotation_boxes,predictions\n";
    for (const auto& r : reports)
        s += r.condition + "," + fmt(r.scale) + "," + fmt(r.ap_clean_gt) + "," + fmt(r.ap_drop) + "," +
             fmt(r.ap_annotations) + "," + std::to_string(r.images) + "," + std::to_string(r.gt_boxes) + "," +
             std::to_string(r.annotation_boxes) + "," + std::to_string(r.predictions) + "\n";
    return s;
}

inline std::string pr_points_csv(const std::vector<APReport>& reports) {
    std::string s = "condition,scale,rank,confidence,recall,precision\n";
    for (const auto& r : reports)
        for (std::size_t k = 0; k < r.curve.points.size(); ++k)
            s += r.condition + "," + fmt(r.scale) + "," + std::to_string(k) + "," + fmt(r.curve.confidences[k]) + "," +
                 fmt(r.curve.points[k].recall) + "," + fmt(r.curve.points[k].precision) + "\n";
    return s;
}

struct PRSeries {
    std::string label;
    std::vector<PRPoint> points;
};

/// Reads a PR point table back, one series per (condition, scale).
inline std::vector<PRSeries> read_pr_points(const fs::path& path) {
    std::istringstream in(read_text(path));
    std::string line;
    std::getline(in, line);
    if (line.rfind("condition,scale,rank", 0) != 0) throw ConfigError("'" + path.string() + "' is not a PR point table");
    std::vector<PRSeries> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ls(line);
        for (std::string c; std::getline(ls, c, ',');) f.push_back(c);
        if (f.size() != 6) throw ConfigError("'" + path.string() + "': malformed row '" + line + "'");
        const std::string label = f[1] == "1" ? f[0] : f[0] + " x" + f[1];
        if (out.empty() || out.back().label != label) out.push_back({label, {}});
        out.back().points.push_back({std::stod(f[4]), std::stod(f[5])});
    }
    return out;
}

inline std::string board_table(const BoardLayout& b) {
    std::string s = "id,x_cm,y_cm\n";
    for (const auto& bulb : b.bulbs) s += std::to_string(bulb.id) + "," + fmt(bulb.x_cm) + "," + fmt(bulb.y_cm) + "\n";
    return s;
}

/// Two columns (position_px, temperature_C) separated by whitespace or a comma; '#' starts a
/// comment and a non-numeric first line is taken as a header.
inline std::vector<ProfileSample> read_profile(const fs::path& path) {
    std::istringstream in(read_text(path));
    std::string line;
    std::vector<ProfileSample> out;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ls(line);
        std::string a, b, extra;
        if (!(ls >> a)) continue;
        double x = 0, t = 0;
        const bool ok = (ls >> b) && !(ls >> extra) &&
                        std::from_chars(a.data(), a.data() + a.size(), x).ptr == a.data() + a.size() &&
                        std::from_chars(b.data(), b.data() + b.size(), t).ptr == b.data() + b.size();
        if (!ok) {
            if (out.empty() && lineno == 1) continue;
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected 'position temperature'");
        }
        out.push_back({x, t});
    }
    return out;
}

}  // namespace irpatch::io
