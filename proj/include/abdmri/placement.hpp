#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "json.hpp"

#include "abdmri/config.hpp"
#include "abdmri/image_ops.hpp"
#include "abdmri/volume.hpp"

namespace abdmri {

enum class PlacementFlag { ok, unreliable, no_intersection };

[[nodiscard]] inline std::string to_string(PlacementFlag f) {
    switch (f) {
        case PlacementFlag::ok:              return "ok";
        case PlacementFlag::unreliable:      return "unreliable";
        case PlacementFlag::no_intersection: return "no_intersection";
    }
    return "?";
}

struct PlacementScore {
    std::string organ;  // "liver" or "pancreas"
    double percent_location = 0.0;  // liver; may fall outside [0, 100]
    std::size_t voxel_count = 0;    // pancreas
    double area_ml = 0.0;           // pancreas
    PlacementFlag flag = PlacementFlag::ok;
};

// Maps the slice's world center into the target grid; returns the continuous
// k index.
inline double locate_slice(const Geometry& slice_geom, const Geometry& target_geom) {
    slice_geom.validate();
    target_geom.validate();
    const Vec3 center = slice_geom.voxel_to_world({0.5 * (slice_geom.dims[0] - 1),
                                                   0.5 * (slice_geom.dims[1] - 1),
                                                   0.5 * (slice_geom.dims[2] - 1)});
    return target_geom.world_to_voxel(center)[2];
}

// Percent location relative to the liver mask: the superior extreme slice is
// 0%, the inferior extreme 100%. Values outside [0, 100] mean the slice
// missed the liver entirely; <5% or >95% is flagged unreliable.
inline PlacementScore liver_percent_location(double k, const Mask3& liver_mask, const Geometry& geom,
                                             const PlacementConfig& cfg = {}) {
    int k_min = geom.dims[2], k_max = -1;
    std::size_t p = 0;
    for (int kk = 0; kk < geom.dims[2]; ++kk)
        for (int j = 0; j < geom.dims[1]; ++j)
            for (int i = 0; i < geom.dims[0]; ++i, ++p)
                if (liver_mask[p]) {
                    k_min = std::min(k_min, kk);
                    k_max = std::max(k_max, kk);
                }
    require(k_max >= 0, ErrorCode::empty_mask, "liver mask is empty");
    require(k_max > k_min, ErrorCode::empty_mask, "liver mask spans a single slice");

    // superior end of the mask is the higher k when the affine z column points up
    const bool z_up = geom.affine.at(2, 2) >= 0.0;
    const double k_top = z_up ? k_max : k_min;
    const double k_bottom = z_up ? k_min : k_max;

    PlacementScore s;
    s.organ = "liver";
    s.percent_location = 100.0 * (k - k_top) / (k_bottom - k_top);
    s.flag = (s.percent_location < cfg.liver_low_pct || s.percent_location > cfg.liver_high_pct)
                 ? PlacementFlag::unreliable
                 : PlacementFlag::ok;
    return s;
}

// Voxel census of the 2D pancreas mask.
inline PlacementScore pancreas_census(const Mask2& slice_mask, double voxel_volume_ml) {
    PlacementScore s;
    s.organ = "pancreas";
    for (const auto v : slice_mask.v) s.voxel_count += v ? 1u : 0u;
    s.area_ml = double(s.voxel_count) * voxel_volume_ml;
    s.flag = s.voxel_count == 0 ? PlacementFlag::no_intersection : PlacementFlag::ok;
    return s;
}

inline nlohmann::json placement_json(const PlacementScore& s) {
    nlohmann::json j;
    j["organ"] = s.organ;
    j["flag"] = to_string(s.flag);
    if (s.organ == "liver") {
        j["percent_location"] = s.percent_location;
    } else {
        j["voxel_count"] = s.voxel_count;
        j["area_ml"] = s.area_ml;
    }
    return j;
}

}  // namespace abdmri
