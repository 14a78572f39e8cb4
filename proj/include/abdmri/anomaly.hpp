#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"

#include "abdmri/assembly.hpp"
#include "abdmri/config.hpp"
#include "abdmri/image_ops.hpp"

namespace abdmri {

struct BodyMask {
    Mask3 mask;
    int component_count_prior_to_selection = 0;
};

// Multi-scale adaptive threshold (majority vote across window scales, with a
// global noise floor), largest 26-connected component, then binary closing.
inline BodyMask body_mask(const Volume& inphase, const AnomalyConfig& cfg = {}) {
    const auto& dims = inphase.geom.dims;
    const auto& v = inphase.data();

    std::vector<float> positive;
    positive.reserve(v.size() / 4);
    for (const float x : v)
        if (x > 0.0f) positive.push_back(x);
    require(!positive.empty(), ErrorCode::empty_body, "volume is empty");
    const float floor_thr = static_cast<float>(cfg.global_floor_frac) * percentile(std::move(positive), 99.0);

    std::vector<std::uint8_t> votes(v.size(), 0);
    for (const int window : cfg.threshold_windows) {
        const std::vector<float> mean = local_mean_3d(v, dims, window / 2);
        for (std::size_t i = 0; i < v.size(); ++i)
            if (v[i] > std::max(static_cast<float>(cfg.local_mean_factor) * mean[i], floor_thr)) ++votes[i];
    }
    Mask3 mask(v.size(), 0);
    const std::uint8_t need = static_cast<std::uint8_t>(cfg.threshold_windows.size() / 2 + 1);
    for (std::size_t i = 0; i < v.size(); ++i) mask[i] = votes[i] >= need ? 1 : 0;

    BodyMask out;
    out.mask = largest_component_3d(mask, dims, &out.component_count_prior_to_selection);
    std::size_t n = 0;
    for (const auto m : out.mask) n += m;
    require(n > 0, ErrorCode::empty_body, "adaptive threshold found no body");
    out.mask = close_3d(out.mask, dims, cfg.closing_radius);
    return out;
}

// ---------------------------------------------------------------------------
// Canny edge detection (2D).
// ---------------------------------------------------------------------------

// Standard chain: Gaussian smoothing, Sobel gradients, non-maximum
// suppression, hysteresis. `low`/`high` are fractions of the maximum gradient
// magnitude.
inline Mask2 canny_edges(const Image2& img, double low, double high, double sigma) {
    const Image2 sm = gaussian_blur_2d(img, sigma);
    const int nx = sm.nx, ny = sm.ny;
    Image2 gx(nx, ny), gy(nx, ny), mag(nx, ny);
    const auto px = [&](int x, int y) {
        return sm.at(std::clamp(x, 0, nx - 1), std::clamp(y, 0, ny - 1));
    };
    float max_mag = 0.0f;
    for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x) {
            const float sx = (px(x + 1, y - 1) + 2 * px(x + 1, y) + px(x + 1, y + 1)) -
                             (px(x - 1, y - 1) + 2 * px(x - 1, y) + px(x - 1, y + 1));
            const float sy = (px(x - 1, y + 1) + 2 * px(x, y + 1) + px(x + 1, y + 1)) -
                             (px(x - 1, y - 1) + 2 * px(x, y - 1) + px(x + 1, y - 1));
            gx.at(x, y) = sx;
            gy.at(x, y) = sy;
            mag.at(x, y) = std::hypot(sx, sy);
            max_mag = std::max(max_mag, mag.at(x, y));
        }
    Mask2 edges(nx, ny, 0);
    if (max_mag <= 0.0f) return edges;
    const float lo_thr = static_cast<float>(low) * max_mag;
    const float hi_thr = static_cast<float>(high) * max_mag;

    // non-maximum suppression with 4-sector direction quantization
    Mask2 strong(nx, ny, 0), weak(nx, ny, 0);
    for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x) {
            const float m = mag.at(x, y);
            if (m < lo_thr) continue;
            const double angle = std::atan2(gy.at(x, y), gx.at(x, y));
            const double deg = std::fmod(angle * 180.0 / 3.14159265358979323846 + 180.0, 180.0);
            int dx1, dy1;
            if (deg < 22.5 || deg >= 157.5) { dx1 = 1; dy1 = 0; }        // horizontal gradient
            else if (deg < 67.5) { dx1 = 1; dy1 = 1; }
            else if (deg < 112.5) { dx1 = 0; dy1 = 1; }                  // vertical gradient
            else { dx1 = -1; dy1 = 1; }
            const auto m_at = [&](int xx, int yy) {
                return (xx >= 0 && yy >= 0 && xx < nx && yy < ny) ? mag.at(xx, yy) : 0.0f;
            };
            // ties along the gradient keep exactly one pixel
            if (m >= m_at(x + dx1, y + dy1) && m > m_at(x - dx1, y - dy1)) {
                if (m >= hi_thr)
                    strong.at(x, y) = 1;
                else
                    weak.at(x, y) = 1;
            }
        }

    // hysteresis: grow strong seeds through weak responses
    std::vector<std::pair<int, int>> stack;
    for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x)
            if (strong.at(x, y)) {
                edges.at(x, y) = 1;
                stack.push_back({x, y});
            }
    while (!stack.empty()) {
        auto [x, y] = stack.back();
        stack.pop_back();
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const int xx = x + dx, yy = y + dy;
                if (xx < 0 || yy < 0 || xx >= nx || yy >= ny) continue;
                if (edges.at(xx, yy) || !weak.at(xx, yy)) continue;
                edges.at(xx, yy) = 1;
                stack.push_back({xx, yy});
            }
    }
    return edges;
}

// ---------------------------------------------------------------------------
// Horizontal run measurement and the anomaly report.
// ---------------------------------------------------------------------------

struct HorizontalRun {
    int length = 0;
    int row = 0;      // image y (volume z)
    int x_start = 0;
    int component = 0;
    bool interior = false;  // entire component lies inside the eroded body
};

// Per 8-connected edge component, the longest contiguous x-span over each
// adjacent row pair (single-pixel gaps tolerated). A straight horizontal edge
// sits exactly between two pixel rows after smoothing, so non-maximum
// suppression scatters it across both; the row-pair union recovers the full
// extent while vertical and diagonal contours still measure small.
inline std::vector<HorizontalRun> horizontal_runs(const Mask2& edges, const Mask2& interior_zone) {
    const Labels2 lab = connected_components_2d(edges);
    const int ncomp = static_cast<int>(lab.count.size());
    std::vector<bool> comp_interior(static_cast<std::size_t>(ncomp), true);
    for (int y = 0; y < edges.ny; ++y)
        for (int x = 0; x < edges.nx; ++x) {
            const std::int32_t l = lab.label.at(x, y);
            if (l > 0 && !interior_zone.at(x, y)) comp_interior[static_cast<std::size_t>(l - 1)] = false;
        }

    std::vector<HorizontalRun> runs;
    std::vector<std::int32_t> pair(static_cast<std::size_t>(edges.nx));
    for (int y = 0; y < edges.ny; ++y) {
        for (int x = 0; x < edges.nx; ++x) {
            const std::int32_t a = lab.label.at(x, y);
            const std::int32_t b = y + 1 < edges.ny ? lab.label.at(x, y + 1) : 0;
            pair[static_cast<std::size_t>(x)] = a ? a : b;
        }
        int x = 0;
        while (x < edges.nx) {
            const std::int32_t l = pair[static_cast<std::size_t>(x)];
            if (l == 0) {
                ++x;
                continue;
            }
            int end = x;
            int probe = x;
            while (probe + 1 < edges.nx) {
                if (pair[static_cast<std::size_t>(probe + 1)] == l)
                    end = ++probe;
                else if (probe + 2 < edges.nx && pair[static_cast<std::size_t>(probe + 1)] == 0 &&
                         pair[static_cast<std::size_t>(probe + 2)] == l) {
                    probe += 2;
                    end = probe;
                } else
                    break;
            }
            HorizontalRun run;
            run.length = end - x + 1;
            run.row = y;
            run.x_start = x;
            run.component = l;
            run.interior = comp_interior[static_cast<std::size_t>(l - 1)];
            runs.push_back(run);
            x = end + 1;
        }
    }
    return runs;
}

enum class AnomalyFlag {
    head_neck_in_fov,
    dropout_chest,
    dropout_knee,
    dropout_other,
    series_shifted,
    fov_dims_mismatch,
    other,
};

[[nodiscard]] inline std::string to_string(AnomalyFlag f) {
    switch (f) {
        case AnomalyFlag::head_neck_in_fov:  return "head_neck_in_fov";
        case AnomalyFlag::dropout_chest:     return "dropout_chest";
        case AnomalyFlag::dropout_knee:      return "dropout_knee";
        case AnomalyFlag::dropout_other:     return "dropout_other";
        case AnomalyFlag::series_shifted:    return "series_shifted";
        case AnomalyFlag::fov_dims_mismatch: return "fov_dims_mismatch";
        case AnomalyFlag::other:             return "other";
    }
    return "?";
}

struct AnomalyReport {
    std::vector<AnomalyFlag> flags;  // sorted, unique
    int max_run_coronal = 0;
    int max_run_sagittal = 0;
    std::vector<std::array<int, 3>> interior_clusters;  // x, z, length per slice cluster
    double head_width_fraction = 0.0;
    double max_centroid_jump_voxels = 0.0;

    [[nodiscard]] bool has(AnomalyFlag f) const {
        return std::find(flags.begin(), flags.end(), f) != flags.end();
    }

    void add(AnomalyFlag f) {
        if (!has(f)) {
            flags.push_back(f);
            std::sort(flags.begin(), flags.end());
        }
    }
};

namespace detail {

struct StationSpan {
    int k_lo = 1 << 30, k_hi = -1;
    [[nodiscard]] bool valid() const { return k_hi >= k_lo; }
};

[[nodiscard]] inline std::array<StationSpan, 7> station_spans(const std::vector<SliceProvenance>& prov) {
    std::array<StationSpan, 7> spans{};
    for (std::size_t k = 0; k < prov.size(); ++k)
        for (int e = 0; e < prov[k].count; ++e) {
            auto& s = spans[static_cast<std::size_t>(prov[k].station[static_cast<std::size_t>(e)])];
            s.k_lo = std::min(s.k_lo, static_cast<int>(k));
            s.k_hi = std::max(s.k_hi, static_cast<int>(k));
        }
    return spans;
}

}  // namespace detail

// Runs the full rule set against an assembled subject:
//  - dims differing from the fixed grid;
//  - horizontal edge runs on the central coronal+sagittal body-mask slices
//    (> run_threshold_both in both, or > run_threshold_either in either);
//  - interior edge clusters classified by station span (chest / knee / other);
//  - wide mask presence in the top slices (head or chin in the field of view);
//  - lateral centroid jumps between stations.
inline AnomalyReport detect_anomalies(const AssembledVolume& assembled, const BodyMask& body,
                                      const AnomalyConfig& cfg = {}) {
    AnomalyReport report;
    const Geometry& g = assembled.channels.geom;

    if (g.dims != protocol::kAssembledDims) report.add(AnomalyFlag::fov_dims_mismatch);

    // mask centroid picks the central slices, robust to off-center subjects
    const Mask3& mask = body.mask;
    double cx = 0.0, cy = 0.0;
    std::size_t n = 0;
    std::size_t p = 0;
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i, ++p)
                if (mask[p]) {
                    cx += i;
                    cy += j;
                    ++n;
                }
    require(n > 0, ErrorCode::empty_body, "body mask is empty");
    const int ci = std::clamp(static_cast<int>(std::lround(cx / double(n))), 0, g.dims[0] - 1);
    const int cj = std::clamp(static_cast<int>(std::lround(cy / double(n))), 0, g.dims[1] - 1);

    const auto analyze = [&](const Mask2& slice_mask, int& max_run, std::vector<HorizontalRun>& interior) {
        Image2 img(slice_mask.nx, slice_mask.ny);
        for (std::size_t i = 0; i < img.v.size(); ++i) img.v[i] = slice_mask.v[i] ? 1.0f : 0.0f;
        const Mask2 edges = canny_edges(img, cfg.canny_low_frac, cfg.canny_high_frac, cfg.canny_sigma);
        const Mask2 zone = erode_2d(fill_holes_2d(slice_mask), cfg.interior_margin);
        const std::vector<HorizontalRun> runs = horizontal_runs(edges, zone);
        max_run = 0;
        for (const auto& r : runs) {
            max_run = std::max(max_run, r.length);
            if (r.interior) interior.push_back(r);
        }
    };

    Mask2 cor(g.dims[0], g.dims[2]), sag(g.dims[1], g.dims[2]);
    for (int k = 0; k < g.dims[2]; ++k) {
        for (int i = 0; i < g.dims[0]; ++i) cor.at(i, k) = mask[g.index(i, cj, k)];
        for (int j = 0; j < g.dims[1]; ++j) sag.at(j, k) = mask[g.index(ci, j, k)];
    }
    std::vector<HorizontalRun> interior;
    analyze(cor, report.max_run_coronal, interior);
    analyze(sag, report.max_run_sagittal, interior);

    if ((report.max_run_coronal > cfg.run_threshold_both && report.max_run_sagittal > cfg.run_threshold_both) ||
        report.max_run_coronal > cfg.run_threshold_either || report.max_run_sagittal > cfg.run_threshold_either)
        report.add(AnomalyFlag::other);

    // interior discontinuities -> signal dropout, classified by station span
    const auto spans = detail::station_spans(assembled.provenance);
    detail::StationSpan torso;
    torso.k_lo = 1 << 30;
    torso.k_hi = -1;
    for (int s = 2; s <= 4; ++s)
        if (spans[static_cast<std::size_t>(s)].valid()) {
            torso.k_lo = std::min(torso.k_lo, spans[static_cast<std::size_t>(s)].k_lo);
            torso.k_hi = std::max(torso.k_hi, spans[static_cast<std::size_t>(s)].k_hi);
        }
    for (const auto& r : interior) {
        report.interior_clusters.push_back({r.x_start, r.row, r.length});
        const int k = r.row;
        if (torso.valid() && k >= torso.k_hi - (torso.k_hi - torso.k_lo + 1) / 3 && k <= torso.k_hi)
            report.add(AnomalyFlag::dropout_chest);
        else if (spans[6].valid() && k >= spans[6].k_lo && k <= spans[6].k_hi)
            report.add(AnomalyFlag::dropout_knee);
        else
            report.add(AnomalyFlag::dropout_other);
    }

    // head or chin in the field of view: wide mask near the top edge
    std::vector<int> width(static_cast<std::size_t>(g.dims[2]), 0);
    p = 0;
    for (int k = 0; k < g.dims[2]; ++k) {
        int lo = g.dims[0], hi = -1;
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i)
                if (mask[g.index(i, j, k)]) {
                    lo = std::min(lo, i);
                    hi = std::max(hi, i);
                }
        width[static_cast<std::size_t>(k)] = hi >= lo ? hi - lo + 1 : 0;
    }
    const int body_width = *std::max_element(width.begin(), width.end());
    if (body_width > 0) {
        for (int k = std::max(0, g.dims[2] - cfg.head_top_slices); k < g.dims[2]; ++k) {
            const double frac = double(width[static_cast<std::size_t>(k)]) / double(body_width);
            report.head_width_fraction = std::max(report.head_width_fraction, frac);
        }
        if (report.head_width_fraction > cfg.head_width_frac) report.add(AnomalyFlag::head_neck_in_fov);
    }

    // lateral centroid jumps between stations (pure-provenance slices only)
    std::array<double, 7> cent_sum{};
    std::array<std::size_t, 7> cent_n{};
    for (int k = 0; k < g.dims[2]; ++k) {
        const auto& pv = assembled.provenance[static_cast<std::size_t>(k)];
        if (pv.count != 1) continue;
        const int station = pv.station[0];
        double sx = 0.0;
        std::size_t sn = 0;
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i)
                if (mask[g.index(i, j, k)]) {
                    sx += i;
                    ++sn;
                }
        if (sn > 0) {
            cent_sum[static_cast<std::size_t>(station)] += sx / double(sn);
            cent_n[static_cast<std::size_t>(station)] += 1;
        }
    }
    double prev = 0.0;
    bool have_prev = false;
    for (int s = 1; s <= 6; ++s) {
        if (!cent_n[static_cast<std::size_t>(s)]) continue;
        const double c = cent_sum[static_cast<std::size_t>(s)] / double(cent_n[static_cast<std::size_t>(s)]);
        if (have_prev)
            report.max_centroid_jump_voxels = std::max(report.max_centroid_jump_voxels, std::abs(c - prev));
        prev = c;
        have_prev = true;
    }
    if (report.max_centroid_jump_voxels > cfg.shift_jump_voxels) report.add(AnomalyFlag::series_shifted);

    return report;
}

inline AnomalyReport detect_anomalies(const AssembledVolume& assembled, const AnomalyConfig& cfg = {}) {
    const BodyMask body = body_mask(extract_channel(assembled.channels, "in"), cfg);
    return detect_anomalies(assembled, body, cfg);
}

inline nlohmann::json anomaly_report_json(const AnomalyReport& r) {
    nlohmann::json flags = nlohmann::json::array();
    for (const auto f : r.flags) flags.push_back(to_string(f));
    nlohmann::json clusters = nlohmann::json::array();
    for (const auto& c : r.interior_clusters)
        clusters.push_back({{"x", c[0]}, {"slice", c[1]}, {"length", c[2]}});
    return nlohmann::json{{"flags", flags},
                          {"evidence",
                           {{"max_run_coronal", r.max_run_coronal},
                            {"max_run_sagittal", r.max_run_sagittal},
                            {"interior_clusters", clusters},
                            {"head_width_fraction", r.head_width_fraction},
                            {"max_centroid_jump_voxels", r.max_centroid_jump_voxels}}}};
}

}  // namespace abdmri
