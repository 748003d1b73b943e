#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "irpatch/imaging.hpp"

namespace irpatch {

struct Bulb {
    int id = 0;
    double x_cm = 0;
    double y_cm = 0;
};

struct BoardLayout {
    double board_cm = 35.0;
    std::vector<Bulb> bulbs;
    double min_spacing_cm = 0;  ///< smallest pairwise distance; 0 with fewer than two bulbs
    std::vector<std::string> warnings;
};

inline BoardLayout export_board(const GaussianPatchParams& params, int side_px, double board_cm = 35.0,
                                double min_spacing_cm = 1.0) {
    if (side_px < 1) throw ContractError("side_px must be >= 1");
    if (!(board_cm > 0)) throw ContractError("board size must be > 0");
    BoardLayout out;
    out.board_cm = board_cm;
    const double k = board_cm / side_px;
    for (std::size_t i = 0; i < params.centers.size(); ++i)
        out.bulbs.push_back({static_cast<int>(i), params.centers[i].x * k, params.centers[i].y * k});

    bool any = false;
    for (std::size_t i = 0; i < out.bulbs.size(); ++i) {
        for (std::size_t j = i + 1; j < out.bulbs.size(); ++j) {
            const double d = std::hypot(out.bulbs[i].x_cm - out.bulbs[j].x_cm, out.bulbs[i].y_cm - out.bulbs[j].y_cm);
            out.min_spacing_cm = any ? std::min(out.min_spacing_cm, d) : d;
            any = true;
            if (d < min_spacing_cm)
                out.warnings.push_back("bulbs " + std::to_string(i) + " and " + std::to_string(j) + " are " +
                                       std::to_string(d) + " cm apart (< " + std::to_string(min_spacing_cm) + " cm)");
        }
    }
    return out;
}

/// Pixel centers of a layout on a `side_px` patch.
inline std::vector<SpotCenter> board_to_pixels(const BoardLayout& layout, int side_px) {
    if (side_px < 1) throw ContractError("side_px must be >= 1");
    std::vector<SpotCenter> out;
    const double k = side_px / layout.board_cm;
    for (const auto& b : layout.bulbs) out.push_back({b.x_cm * k, b.y_cm * k});
    return out;
}

}  // namespace irpatch
