#pragma once

#include <cmath>
#include <vector>

#include "abdmri/volume.hpp"

namespace abdmri {

enum class Interp { nearest, trilinear };

namespace detail {

template <typename T>
[[nodiscard]] T sample_nearest(const std::vector<T>& src, const Geometry& g, const Vec3& q) {
    const int i = static_cast<int>(std::lround(q[0]));
    const int j = static_cast<int>(std::lround(q[1]));
    const int k = static_cast<int>(std::lround(q[2]));
    if (!g.contains(i, j, k)) return T{};
    return src[g.index(i, j, k)];
}

// Corners outside the source grid contribute the fill value zero.
template <typename T>
[[nodiscard]] T sample_trilinear(const std::vector<T>& src, const Geometry& g, const Vec3& q) {
    const int i0 = static_cast<int>(std::floor(q[0]));
    const int j0 = static_cast<int>(std::floor(q[1]));
    const int k0 = static_cast<int>(std::floor(q[2]));
    const double fx = q[0] - i0, fy = q[1] - j0, fz = q[2] - k0;
    T acc{};
    for (int dk = 0; dk < 2; ++dk)
        for (int dj = 0; dj < 2; ++dj)
            for (int di = 0; di < 2; ++di) {
                const double w = (di ? fx : 1.0 - fx) * (dj ? fy : 1.0 - fy) * (dk ? fz : 1.0 - fz);
                if (w == 0.0) continue;
                const int i = i0 + di, j = j0 + dj, k = k0 + dk;
                if (!g.contains(i, j, k)) continue;
                acc += static_cast<T>(src[g.index(i, j, k)] * static_cast<float>(w));
            }
    return acc;
}

}  // namespace detail

// Resamples one channel onto the target grid. Each output voxel is sampled at
// the world point reached through the target affine and pulled back through
// the inverse source affine; out-of-bounds samples fill with zero.
template <typename T>
[[nodiscard]] std::vector<T> resample_channel(const std::vector<T>& src, const Geometry& src_geom,
                                              const Geometry& target, Interp method) {
    const Affine src_inv = src_geom.affine.inverse();
    std::vector<T> out(target.nvox());
    std::size_t idx = 0;
    for (int k = 0; k < target.dims[2]; ++k)
        for (int j = 0; j < target.dims[1]; ++j)
            for (int i = 0; i < target.dims[0]; ++i, ++idx) {
                const Vec3 w = target.voxel_to_world({double(i), double(j), double(k)});
                const Vec3 q = src_inv.apply(w);
                out[idx] = (method == Interp::nearest) ? detail::sample_nearest(src, src_geom, q)
                                                       : detail::sample_trilinear(src, src_geom, q);
            }
    return out;
}

[[nodiscard]] inline Volume resample(const Volume& src, const Geometry& target, Interp method) {
    src.validate();
    target.validate();
    Volume out;
    out.geom = target;
    out.kind = src.kind == ElementKind::complex64 ? ElementKind::complex64 : ElementKind::float32;
    out.names = src.names;
    if (src.is_complex()) {
        for (const auto& ch : src.cplx) out.cplx.push_back(resample_channel(ch, src.geom, target, method));
    } else {
        for (const auto& ch : src.real) out.real.push_back(resample_channel(ch, src.geom, target, method));
    }
    return out;
}

[[nodiscard]] inline WorldExtent world_extent(const Volume& vol) { return world_extent(vol.geom); }

// Overlap depth in mm of two voxel-center extents along the z axis; negative
// when disjoint.
[[nodiscard]] inline double z_overlap_mm(const Geometry& a, const Geometry& b) {
    const WorldExtent ea = world_extent(a);
    const WorldExtent eb = world_extent(b);
    return std::min(ea.hi[2], eb.hi[2]) - std::max(ea.lo[2], eb.lo[2]);
}

}  // namespace abdmri
