#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "abdmri/bias.hpp"
#include "abdmri/config.hpp"
#include "abdmri/resample.hpp"
#include "abdmri/volume.hpp"

namespace abdmri {

inline constexpr std::array<const char*, 4> kDixonChannels = {"in", "opp", "fat", "water"};

// One Dixon station: four single-channel volumes on a shared grid. Channels
// may be absent on malformed inputs; assemble() rejects those.
struct DixonSeries {
    std::string label;
    std::optional<Volume> in, opp, fat, water;

    [[nodiscard]] const std::optional<Volume>& channel(int c) const {
        switch (c) {
            case 0: return in;
            case 1: return opp;
            case 2: return fat;
            default: return water;
        }
    }

    [[nodiscard]] std::optional<Volume>& channel(int c) {
        return const_cast<std::optional<Volume>&>(static_cast<const DixonSeries*>(this)->channel(c));
    }

    [[nodiscard]] bool complete() const { return in && opp && fat && water; }

    [[nodiscard]] const Geometry& geometry() const {
        for (int c = 0; c < 4; ++c)
            if (channel(c)) return channel(c)->geom;
        fail(ErrorCode::missing_channel, "series '" + label + "' has no channels");
    }
};

struct DixonSubject {
    std::vector<DixonSeries> series;
    std::string sex;            // "F" or "M"; used for atlas selection
    double height_mm = 0.0;
};

// Raised-cosine blend for the superior series across an n-slice overlap,
// index 0 at the interior edge. The complementary weight serves the inferior
// series.
[[nodiscard]] inline std::vector<double> blend_weights(int n, double exponent = 1.0) {
    require(n >= 1, ErrorCode::invalid_config, "overlap must span at least one slice");
    std::vector<double> w(static_cast<std::size_t>(n));
    if (n == 1) {
        w[0] = 0.5;
        return w;
    }
    for (int k = 0; k < n; ++k) {
        const double c = 0.5 * (1.0 + std::cos(3.14159265358979323846 * double(k) / double(n - 1)));
        if (exponent == 1.0) {
            w[static_cast<std::size_t>(k)] = c;
        } else {
            const double a = std::pow(c, exponent), b = std::pow(1.0 - c, exponent);
            w[static_cast<std::size_t>(k)] = (a + b) > 0.0 ? a / (a + b) : 0.5;
        }
    }
    return w;
}

// Per-output-slice source stations (1-based, superior to inferior) and blend
// weights; at most two stations contribute to a slice.
struct SliceProvenance {
    int count = 0;
    std::array<int, 2> station = {0, 0};
    std::array<double, 2> weight = {0.0, 0.0};
};

struct AssembledVolume {
    Volume channels;  // in, opp, fat, water on the fixed target grid
    std::vector<SliceProvenance> provenance;

    [[nodiscard]] const std::vector<float>& channel(const std::string& name) const {
        return channels.channel(name);
    }
};

namespace detail {

struct SeriesCoverage {
    int station = 0;  // 1-based after superior sort
    int k_lo = 0, k_hi = -1;
};

[[nodiscard]] inline double z_center(const Geometry& g) {
    const WorldExtent e = world_extent(g);
    return 0.5 * (e.lo[2] + e.hi[2]);
}

}  // namespace detail

// Builds the fixed assembled grid: x/y centered on the second station, z so
// the top slice sits at the superior-most voxel center.
[[nodiscard]] inline Geometry assembled_target_geometry(const std::vector<const Geometry*>& sorted_series) {
    const std::array<int, 3> dims = protocol::kAssembledDims;
    const Vec3 sp = {protocol::kAssembledSpacingMm[0], protocol::kAssembledSpacingMm[1],
                     protocol::kAssembledSpacingMm[2]};
    const Geometry& ref = *sorted_series[1];
    const WorldExtent re = world_extent(ref);
    const double cx = 0.5 * (re.lo[0] + re.hi[0]);
    const double cy = 0.5 * (re.lo[1] + re.hi[1]);
    double z_top = -1e30;
    for (const Geometry* g : sorted_series) z_top = std::max(z_top, world_extent(*g).hi[2]);
    const Vec3 origin = {cx - 0.5 * (dims[0] - 1) * sp[0], cy - 0.5 * (dims[1] - 1) * sp[1],
                         z_top - (dims[2] - 1) * sp[2]};
    return Geometry::axis_aligned(dims, sp, origin);
}

// Merges the six stations into one neck-to-knee volume: per-series bias
// correction on the in-phase channel (applied to all four), resampling onto
// the fixed grid, raised-cosine blending over the overlaps, then a final bias
// correction pass on the blended in-phase.
inline AssembledVolume assemble(const DixonSubject& subject, const AssemblyConfig& cfg = {}) {
    require(subject.series.size() == 6, ErrorCode::missing_series,
            "expected 6 series, got " + std::to_string(subject.series.size()));
    for (const auto& s : subject.series) {
        for (int c = 0; c < 4; ++c)
            require(s.channel(c).has_value(), ErrorCode::missing_channel,
                    "series '" + s.label + "' lacks channel " + kDixonChannels[static_cast<std::size_t>(c)]);
        const Geometry& g = s.in->geom;
        for (int c = 1; c < 4; ++c)
            require(s.channel(c)->geom.same_grid(g), ErrorCode::geometry_mismatch,
                    "channels of series '" + s.label + "' disagree on geometry");
    }

    // superior -> inferior, regardless of input order
    std::vector<int> order(6);
    for (int i = 0; i < 6; ++i) order[static_cast<std::size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return detail::z_center(subject.series[static_cast<std::size_t>(a)].geometry()) >
               detail::z_center(subject.series[static_cast<std::size_t>(b)].geometry());
    });

    std::vector<const Geometry*> geoms;
    for (int s : order) geoms.push_back(&subject.series[static_cast<std::size_t>(s)].geometry());
    for (int s = 0; s + 1 < 6; ++s)
        require(z_overlap_mm(*geoms[static_cast<std::size_t>(s)], *geoms[static_cast<std::size_t>(s) + 1]) > 0.0,
                ErrorCode::no_overlap, "stations " + std::to_string(s + 1) + " and " + std::to_string(s + 2) +
                                           " are disjoint along z");

    const Geometry target = assembled_target_geometry(geoms);
    const double z0 = target.affine.at(2, 3);
    const double dz = target.spacing[2];

    // inward-rounded slice coverage per station
    std::vector<detail::SeriesCoverage> cov(6);
    for (int s = 0; s < 6; ++s) {
        const WorldExtent e = world_extent(*geoms[static_cast<std::size_t>(s)]);
        cov[static_cast<std::size_t>(s)].station = s + 1;
        cov[static_cast<std::size_t>(s)].k_lo =
            std::max(0, static_cast<int>(std::ceil((e.lo[2] - z0) / dz - 1e-9)));
        cov[static_cast<std::size_t>(s)].k_hi =
            std::min(target.dims[2] - 1, static_cast<int>(std::floor((e.hi[2] - z0) / dz + 1e-9)));
    }

    std::vector<SliceProvenance> prov(static_cast<std::size_t>(target.dims[2]));
    for (int k = 0; k < target.dims[2]; ++k) {
        std::vector<int> covering;
        for (int s = 0; s < 6; ++s)
            if (k >= cov[static_cast<std::size_t>(s)].k_lo && k <= cov[static_cast<std::size_t>(s)].k_hi)
                covering.push_back(s);
        require(!covering.empty(), ErrorCode::no_overlap,
                "slice " + std::to_string(k) + " is not covered by any station");
        auto& p = prov[static_cast<std::size_t>(k)];
        require(covering.size() <= 2, ErrorCode::invalid_config,
                "more than two stations overlap at slice " + std::to_string(k));
        if (covering.size() == 1) {
            p.count = 1;
            p.station[0] = covering[0] + 1;
            p.weight[0] = 1.0;
        } else {
            // `sup` has the smaller station number and covers the higher k range
            const int sup = std::min(covering[0], covering[1]);
            const int inf = std::max(covering[0], covering[1]);
            const int ov_top = cov[static_cast<std::size_t>(inf)].k_hi;  // inferior station's top edge
            const int ov_bot = cov[static_cast<std::size_t>(sup)].k_lo;  // superior station's bottom edge
            const int n = ov_top - ov_bot + 1;
            const std::vector<double> w = blend_weights(std::max(1, n), cfg.blend_exponent);
            const int j = ov_top - k;  // 0 at the top, deep inside the superior station
            const double ws = w[static_cast<std::size_t>(std::clamp(j, 0, n - 1))];
            p.count = 2;
            p.station[0] = sup + 1;
            p.weight[0] = ws;
            p.station[1] = inf + 1;
            p.weight[1] = 1.0 - ws;
        }
    }

    // bias-correct per station, resample the covered slab, accumulate
    Volume out;
    out.geom = target;
    out.kind = ElementKind::float32;
    for (const char* name : kDixonChannels) {
        out.names.push_back(name);
        out.real.emplace_back(target.nvox(), 0.0f);
    }

    const std::size_t slice_stride = static_cast<std::size_t>(target.dims[0]) * target.dims[1];
    for (int s = 0; s < 6; ++s) {
        const DixonSeries& series = subject.series[static_cast<std::size_t>(order[static_cast<std::size_t>(s)])];
        const Mask3 mask = intensity_mask(*series.in, cfg.mask_threshold_frac);
        std::size_t mask_n = 0;
        for (const auto m : mask) mask_n += m;
        BiasField bias;
        const bool have_bias = mask_n > 0;
        if (have_bias) bias = estimate_bias_field(*series.in, mask, cfg.bias);

        const auto& c = cov[static_cast<std::size_t>(s)];
        if (c.k_hi < c.k_lo) continue;
        Geometry slab = target;
        slab.dims[2] = c.k_hi - c.k_lo + 1;
        slab.affine.at(2, 3) = z0 + dz * c.k_lo;

        for (int ch = 0; ch < 4; ++ch) {
            std::vector<float> data = series.channel(ch)->real[0];
            if (have_bias) {
                const auto& f = bias.field.real[0];
                for (std::size_t i = 0; i < data.size(); ++i)
                    if (bias.mask[i]) data[i] /= f[i];
            }
            const std::vector<float> slab_data =
                resample_channel(data, series.channel(ch)->geom, slab, Interp::trilinear);
            auto& dst = out.real[static_cast<std::size_t>(ch)];
            for (int k = c.k_lo; k <= c.k_hi; ++k) {
                const auto& p = prov[static_cast<std::size_t>(k)];
                double w = 0.0;
                for (int e = 0; e < p.count; ++e)
                    if (p.station[static_cast<std::size_t>(e)] == s + 1) w = p.weight[static_cast<std::size_t>(e)];
                if (w == 0.0) continue;
                const float wf = static_cast<float>(w);
                const std::size_t src_off = static_cast<std::size_t>(k - c.k_lo) * slice_stride;
                const std::size_t dst_off = static_cast<std::size_t>(k) * slice_stride;
                for (std::size_t i = 0; i < slice_stride; ++i) dst[dst_off + i] += wf * slab_data[src_off + i];
            }
        }
    }

    // final bias pass on the blended in-phase
    Volume blended_in;
    blended_in.geom = target;
    blended_in.kind = ElementKind::float32;
    blended_in.names = {"in"};
    blended_in.real = {out.real[0]};
    const Mask3 final_mask = intensity_mask(blended_in, cfg.mask_threshold_frac);
    std::size_t final_n = 0;
    for (const auto m : final_mask) final_n += m;
    if (final_n > 0) {
        const BiasField final_bias = estimate_bias_field(blended_in, final_mask, cfg.bias);
        const auto& f = final_bias.field.real[0];
        for (auto& ch : out.real)
            for (std::size_t i = 0; i < ch.size(); ++i)
                if (final_mask[i]) ch[i] /= f[i];
    }

    AssembledVolume assembled;
    assembled.channels = std::move(out);
    assembled.provenance = std::move(prov);
    return assembled;
}

[[nodiscard]] inline Volume extract_channel(const Volume& multi, const std::string& name) {
    Volume v;
    v.geom = multi.geom;
    v.kind = multi.kind;
    v.names = {name};
    v.real = {multi.channel(name)};
    return v;
}

inline nlohmann::json provenance_json(const AssembledVolume& a) {
    nlohmann::json slices = nlohmann::json::array();
    for (std::size_t k = 0; k < a.provenance.size(); ++k) {
        const auto& p = a.provenance[k];
        nlohmann::json entry;
        entry["slice"] = k;
        nlohmann::json sources = nlohmann::json::array();
        for (int e = 0; e < p.count; ++e)
            sources.push_back({{"station", p.station[static_cast<std::size_t>(e)]},
                               {"weight", p.weight[static_cast<std::size_t>(e)]}});
        entry["sources"] = sources;
        slices.push_back(entry);
    }
    return nlohmann::json{{"slices", slices}};
}

}  // namespace abdmri
