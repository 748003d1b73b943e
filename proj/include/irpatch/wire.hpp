#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "irpatch/detect.hpp"
#include "irpatch/io.hpp"

namespace irpatch::wire {

using nlohmann::json;

inline std::string base64_encode(std::string_view in) {
    static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((in.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < in.size(); i += 3) {
        const unsigned v = (static_cast<unsigned char>(in[i]) << 16) | (static_cast<unsigned char>(in[i + 1]) << 8) |
                           static_cast<unsigned char>(in[i + 2]);
        out += {kAlphabet[v >> 18], kAlphabet[(v >> 12) & 63], kAlphabet[(v >> 6) & 63], kAlphabet[v & 63]};
    }
    if (const std::size_t rest = in.size() - i; rest > 0) {
        unsigned v = static_cast<unsigned char>(in[i]) << 16;
        if (rest == 2) v |= static_cast<unsigned char>(in[i + 1]) << 8;
        out += kAlphabet[v >> 18];
        out += kAlphabet[(v >> 12) & 63];
        out += rest == 2 ? kAlphabet[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

/// Strict decoding: padded input only, no whitespace.
inline std::string base64_decode(std::string_view in) {
    static const std::array<int, 256> table = [] {
        std::array<int, 256> t{};
        t.fill(-1);
        const std::string_view a = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
        for (std::size_t i = 0; i < a.size(); ++i) t[static_cast<unsigned char>(a[i])] = static_cast<int>(i);
        return t;
    }();
    if (in.size() % 4 != 0) throw ProtocolError("base64 length is not a multiple of 4");
    std::string out;
    out.reserve(in.size() / 4 * 3);
    for (std::size_t i = 0; i < in.size(); i += 4) {
        const bool last = i + 4 == in.size();
        const int pad = last ? (in[i + 3] == '=') + (in[i + 2] == '=') : 0;
        int v[4];
        for (int k = 0; k < 4; ++k) {
            v[k] = k >= 4 - pad ? 0 : table[static_cast<unsigned char>(in[i + static_cast<std::size_t>(k)])];
            if (v[k] < 0) throw ProtocolError("invalid base64 character");
        }
        if (pad == 1 && in[i + 2] == '=') throw ProtocolError("invalid base64 padding");
        const unsigned n = (static_cast<unsigned>(v[0]) << 18) | (static_cast<unsigned>(v[1]) << 12) |
                           (static_cast<unsigned>(v[2]) << 6) | static_cast<unsigned>(v[3]);
        out += static_cast<char>(n >> 16);
        if (pad < 2) out += static_cast<char>((n >> 8) & 255);
        if (pad < 1) out += static_cast<char>(n & 255);
    }
    return out;
}

struct Request {
    std::int64_t id = 0;
    GrayImage image;
};

struct Response {
    std::int64_t id = 0;
    std::vector<Detection> detections;
};

/// One request line (no trailing newline): the image quantized to 8 bits, row-major.
inline std::string encode_request(std::int64_t id, const GrayImage& image) {
    std::string bytes;
    bytes.reserve(image.size());
    for (double v : image.values()) bytes.push_back(static_cast<char>(io::to_byte(v)));
    return json{{"id", id}, {"h", image.height()}, {"w", image.width()}, {"pixels", base64_encode(bytes)}}.dump();
}

inline Request decode_request(std::string_view line) {
    try {
        const json j = json::parse(line);
        Request r;
        r.id = j.at("id").get<std::int64_t>();
        const int h = j.at("h").get<int>(), w = j.at("w").get<int>();
        if (h < 1 || w < 1) throw ProtocolError("image size must be positive");
        const std::string bytes = base64_decode(j.at("pixels").get<std::string>());
        if (bytes.size() != static_cast<std::size_t>(h) * static_cast<std::size_t>(w))
            throw ProtocolError("pixel payload does not match h*w");
        r.image = GrayImage(h, w);
        auto px = r.image.values();
        for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<unsigned char>(bytes[i]) / 255.0;
        return r;
    } catch (const json::exception& e) {
        throw ProtocolError(std::string("malformed request: ") + e.what());
    }
}

inline std::string encode_response(std::int64_t id, const std::vector<Detection>& dets) {
    json arr = json::array();
    for (const auto& d : dets)
        arr.push_back({{"x", d.box.x},
                       {"y", d.box.y},
                       {"w", d.box.w},
                       {"h", d.box.h},
                       {"objectness", d.objectness},
                       {"class_score", d.class_score},
                       {"class_id", d.class_id}});
    return json{{"id", id}, {"detections", arr}}.dump();
}

/// Parses a reply line; unknown fields are ignored. Malformed content is a ProtocolError.
inline Response decode_response(std::string_view line) {
    try {
        const json j = json::parse(line);
        Response r;
        r.id = j.at("id").get<std::int64_t>();
        for (const auto& d : j.at("detections")) {
            Detection det;
            det.box = {d.at("x").get<double>(), d.at("y").get<double>(), d.at("w").get<double>(), d.at("h").get<double>()};
            det.objectness = d.at("objectness").get<double>();
            det.class_score = d.at("class_score").get<double>();
            det.class_id = d.at("class_id").get<int>();
            if (!det.box.valid() || !std::isfinite(det.box.x) || !std::isfinite(det.box.y))
                throw ProtocolError("detection box must be finite with positive size");
            for (double v : {det.objectness, det.class_score})
                if (!(v >= 0 && v <= 1)) throw ProtocolError("scores must lie in [0,1]");
            r.detections.push_back(det);
        }
        return r;
    } catch (const json::exception& e) {
        throw ProtocolError(std::string("malformed response: ") + e.what());
    }
}

}  // namespace irpatch::wire
