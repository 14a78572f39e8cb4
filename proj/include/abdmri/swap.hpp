#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "abdmri/assembly.hpp"
#include "abdmri/config.hpp"
#include "abdmri/image_ops.hpp"

namespace abdmri {

enum class SwapRegion { whole, left_half, right_half };
enum class SwapLabel { water_correct, swapped };

[[nodiscard]] inline std::string to_string(SwapRegion r) {
    switch (r) {
        case SwapRegion::whole:      return "whole";
        case SwapRegion::left_half:  return "left_half";
        case SwapRegion::right_half: return "right_half";
    }
    return "?";
}

[[nodiscard]] inline std::string to_string(SwapLabel l) {
    return l == SwapLabel::swapped ? "swapped" : "water_correct";
}

struct SwapCheck {
    int series = 0;  // station 1..6, superior to inferior
    SwapRegion region = SwapRegion::whole;
    SwapLabel label = SwapLabel::water_correct;
    double score = 0.5;  // calibrated probability that the labeling is correct
};

// Exactly eight checks per subject: stations 1-4 whole, stations 5-6 split
// into left/right halves.
struct SwapReport {
    std::vector<SwapCheck> checks;
    std::vector<bool> corrected;
};

// Central coronal fat/water pair, jointly normalized and laterally cropped.
// Image x always increases with world x (the subject's left).
struct SwapSlicePair {
    Image2 fat, water;
    int coronal_index = 0;
};

// Picks the coronal slice with the strongest body profile, normalizes both
// channels by their joint maximum, and crops `crop_voxels` columns from each
// lateral edge.
inline SwapSlicePair prepare_slice(const Volume& fat, const Volume& water, const SwapConfig& cfg = {}) {
    require(fat.geom.same_grid(water.geom), ErrorCode::geometry_mismatch, "fat/water grids differ");
    const Geometry& g = fat.geom;
    const auto& fv = fat.real[0];
    const auto& wv = water.real[0];

    double best = 0.0;
    int best_j = -1;
    for (int j = 0; j < g.dims[1]; ++j) {
        double profile = 0.0;
        for (int k = 0; k < g.dims[2]; ++k)
            for (int i = 0; i < g.dims[0]; ++i) {
                const std::size_t p = g.index(i, j, k);
                profile += double(fv[p]) + double(wv[p]);
            }
        if (profile > best) {
            best = profile;
            best_j = j;
        }
    }
    require(best_j >= 0 && best > 0.0, ErrorCode::degenerate_profile, "no body profile in series");
    require(g.dims[0] > 2 * cfg.crop_voxels, ErrorCode::degenerate_profile,
            "series too narrow for lateral cropping");

    Image2 fs = coronal_slice(fv, g, best_j);
    Image2 ws = coronal_slice(wv, g, best_j);
    if (g.affine.at(0, 0) < 0.0) {  // keep image x aligned with world +x
        for (int y = 0; y < fs.ny; ++y)
            for (int x = 0; x < fs.nx / 2; ++x) {
                std::swap(fs.at(x, y), fs.at(fs.nx - 1 - x, y));
                std::swap(ws.at(x, y), ws.at(ws.nx - 1 - x, y));
            }
    }

    float m = 0.0f;
    for (const float v : fs.v) m = std::max(m, v);
    for (const float v : ws.v) m = std::max(m, v);
    require(m > 0.0f, ErrorCode::degenerate_profile, "selected slice is empty");

    SwapSlicePair out;
    out.coronal_index = best_j;
    const int w = fs.nx - 2 * cfg.crop_voxels;
    out.fat = Image2(w, fs.ny);
    out.water = Image2(w, fs.ny);
    for (int y = 0; y < fs.ny; ++y)
        for (int x = 0; x < w; ++x) {
            out.fat.at(x, y) = fs.at(x + cfg.crop_voxels, y) / m;
            out.water.at(x, y) = ws.at(x + cfg.crop_voxels, y) / m;
        }
    return out;
}

// Reference classifier: the subcutaneous shell is fat-dominant, so compare
// shell means of the two presented channels. Positive margin means the
// channels are labeled correctly. Pluggable: a learned model honoring this
// signature can replace it.
inline SwapCheck classify_swap(const Image2& fat_img, const Image2& water_img, SwapRegion region,
                               const SwapConfig& cfg = {}) {
    require(fat_img.nx == water_img.nx && fat_img.ny == water_img.ny, ErrorCode::geometry_mismatch,
            "image shapes differ");
    int x_lo = 0, x_hi = fat_img.nx;
    if (region == SwapRegion::right_half) x_hi = fat_img.nx / 2;   // lower world x
    if (region == SwapRegion::left_half) x_lo = fat_img.nx / 2;

    Mask2 mask(x_hi - x_lo, fat_img.ny, 0);
    for (int y = 0; y < fat_img.ny; ++y)
        for (int x = x_lo; x < x_hi; ++x)
            mask.at(x - x_lo, y) =
                (fat_img.at(x, y) + water_img.at(x, y)) > cfg.mask_threshold ? 1 : 0;

    const Mask2 core = erode_2d(mask, cfg.shell_radius);
    double fat_sum = 0.0, water_sum = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < mask.ny; ++y)
        for (int x = 0; x < mask.nx; ++x)
            if (mask.at(x, y) && !core.at(x, y)) {
                fat_sum += fat_img.at(x + x_lo, y);
                water_sum += water_img.at(x + x_lo, y);
                ++n;
            }

    const double s = n ? (fat_sum - water_sum) / double(n) : 0.0;
    SwapCheck check;
    check.region = region;
    check.score = 1.0 / (1.0 + std::exp(-s / cfg.score_scale));
    check.label = s > 0.0 ? SwapLabel::water_correct : SwapLabel::swapped;
    return check;
}

using SwapClassifier = std::function<SwapCheck(const Image2&, const Image2&, SwapRegion)>;

namespace detail {

[[nodiscard]] inline std::vector<int> stations_by_z(const DixonSubject& subject) {
    std::vector<int> order(subject.series.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return z_center(subject.series[static_cast<std::size_t>(a)].geometry()) >
               z_center(subject.series[static_cast<std::size_t>(b)].geometry());
    });
    return order;
}

}  // namespace detail

inline SwapReport run_swap_checks(const DixonSubject& subject, const SwapConfig& cfg = {},
                                  const SwapClassifier& classifier = {}) {
    require(subject.series.size() == 6, ErrorCode::missing_series,
            "swap checks need all six series");
    const std::vector<int> order = detail::stations_by_z(subject);
    const auto classify = classifier ? classifier : [&cfg](const Image2& f, const Image2& w, SwapRegion r) {
        return classify_swap(f, w, r, cfg);
    };

    SwapReport report;
    for (int s = 0; s < 6; ++s) {
        const DixonSeries& series = subject.series[static_cast<std::size_t>(order[static_cast<std::size_t>(s)])];
        require(series.fat && series.water, ErrorCode::missing_channel,
                "series '" + series.label + "' lacks fat/water channels");
        const SwapSlicePair pair = prepare_slice(*series.fat, *series.water, cfg);
        const auto regions = s < 4 ? std::vector<SwapRegion>{SwapRegion::whole}
                                   : std::vector<SwapRegion>{SwapRegion::left_half, SwapRegion::right_half};
        for (const SwapRegion r : regions) {
            SwapCheck check = classify(pair.fat, pair.water, r);
            check.series = s + 1;
            check.region = r;
            report.checks.push_back(check);
        }
    }
    report.corrected.assign(report.checks.size(), false);
    return report;
}

// Exchanges fat/water voxel data for every flagged check; whole series or the
// lateral half split at the grid's mid-sagittal plane. Applying the same
// report twice restores the input.
inline DixonSubject correct_swaps(const DixonSubject& subject, SwapReport& report) {
    require(report.checks.size() == 8, ErrorCode::invalid_config, "swap report must carry 8 checks");
    DixonSubject out = subject;
    const std::vector<int> order = detail::stations_by_z(out);
    for (std::size_t c = 0; c < report.checks.size(); ++c) {
        const SwapCheck& check = report.checks[c];
        if (check.label != SwapLabel::swapped) continue;
        DixonSeries& series = out.series[static_cast<std::size_t>(order[static_cast<std::size_t>(check.series - 1)])];
        require(series.fat && series.water, ErrorCode::missing_channel, "cannot correct incomplete series");
        auto& f = series.fat->real[0];
        auto& w = series.water->real[0];
        if (check.region == SwapRegion::whole) {
            std::swap(f, w);
        } else {
            const Geometry& g = series.fat->geom;
            const int half = g.dims[0] / 2;
            const bool left_is_high_i = g.affine.at(0, 0) >= 0.0;
            const bool want_left = check.region == SwapRegion::left_half;
            const int i_lo = (want_left == left_is_high_i) ? half : 0;
            const int i_hi = (want_left == left_is_high_i) ? g.dims[0] : half;
            for (int k = 0; k < g.dims[2]; ++k)
                for (int j = 0; j < g.dims[1]; ++j)
                    for (int i = i_lo; i < i_hi; ++i) std::swap(f[g.index(i, j, k)], w[g.index(i, j, k)]);
        }
        report.corrected[c] = true;
    }
    return out;
}

inline nlohmann::json swap_report_json(const SwapReport& report) {
    nlohmann::json arr = nlohmann::json::array();
    for (std::size_t c = 0; c < report.checks.size(); ++c) {
        const SwapCheck& k = report.checks[c];
        arr.push_back({{"series", k.series},
                       {"region", to_string(k.region)},
                       {"label", to_string(k.label)},
                       {"score", k.score},
                       {"corrected", report.corrected.size() > c && report.corrected[c]}});
    }
    return arr;
}

}  // namespace abdmri
