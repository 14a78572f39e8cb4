#pragma once

#include <array>
#include <cmath>
#include <cstddef>

#include "abdmri/errors.hpp"

namespace abdmri {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }

[[nodiscard]] inline double dot(const Vec3& a, const Vec3& b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

[[nodiscard]] inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

// Homogeneous 4x4 voxel/world transform, row-major, last row fixed to 0 0 0 1.
class Affine {
  public:
    Affine() : m_{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1} {}

    static Affine identity() { return Affine{}; }

    // Diagonal scaling plus translation; the common axis-aligned case.
    static Affine scaling_translation(const Vec3& scale, const Vec3& offset) {
        Affine a = identity();
        for (int i = 0; i < 3; ++i) {
            a.at(i, i) = scale[i];
            a.at(i, 3) = offset[i];
        }
        return a;
    }

    [[nodiscard]] double& at(int r, int c) { return m_[static_cast<std::size_t>(r) * 4 + c]; }
    [[nodiscard]] double at(int r, int c) const { return m_[static_cast<std::size_t>(r) * 4 + c]; }

    [[nodiscard]] Vec3 apply(const Vec3& v) const {
        Vec3 out;
        for (int r = 0; r < 3; ++r)
            out[r] = at(r, 0) * v[0] + at(r, 1) * v[1] + at(r, 2) * v[2] + at(r, 3);
        return out;
    }

    [[nodiscard]] Vec3 column(int c) const { return {at(0, c), at(1, c), at(2, c)}; }

    [[nodiscard]] double det3() const {
        return at(0, 0) * (at(1, 1) * at(2, 2) - at(1, 2) * at(2, 1)) -
               at(0, 1) * (at(1, 0) * at(2, 2) - at(1, 2) * at(2, 0)) +
               at(0, 2) * (at(1, 0) * at(2, 1) - at(1, 1) * at(2, 0));
    }

    // Inverse assuming the last row is 0 0 0 1.
    [[nodiscard]] Affine inverse() const {
        const double d = det3();
        require(std::abs(d) > 1e-12, ErrorCode::singular_affine, "affine 3x3 block is singular");
        Affine inv = identity();
        const double id = 1.0 / d;
        inv.at(0, 0) = (at(1, 1) * at(2, 2) - at(1, 2) * at(2, 1)) * id;
        inv.at(0, 1) = (at(0, 2) * at(2, 1) - at(0, 1) * at(2, 2)) * id;
        inv.at(0, 2) = (at(0, 1) * at(1, 2) - at(0, 2) * at(1, 1)) * id;
        inv.at(1, 0) = (at(1, 2) * at(2, 0) - at(1, 0) * at(2, 2)) * id;
        inv.at(1, 1) = (at(0, 0) * at(2, 2) - at(0, 2) * at(2, 0)) * id;
        inv.at(1, 2) = (at(0, 2) * at(1, 0) - at(0, 0) * at(1, 2)) * id;
        inv.at(2, 0) = (at(1, 0) * at(2, 1) - at(1, 1) * at(2, 0)) * id;
        inv.at(2, 1) = (at(0, 1) * at(2, 0) - at(0, 0) * at(2, 1)) * id;
        inv.at(2, 2) = (at(0, 0) * at(1, 1) - at(0, 1) * at(1, 0)) * id;
        for (int r = 0; r < 3; ++r) {
            inv.at(r, 3) = -(inv.at(r, 0) * at(0, 3) + inv.at(r, 1) * at(1, 3) + inv.at(r, 2) * at(2, 3));
        }
        return inv;
    }

    [[nodiscard]] bool almost_equal(const Affine& o, double tol) const {
        for (std::size_t i = 0; i < 16; ++i)
            if (std::abs(m_[i] - o.m_[i]) > tol) return false;
        return true;
    }

  private:
    std::array<double, 16> m_{};
};

// Voxel grid geometry: dims in voxels, spacing in mm/voxel, affine mapping
// voxel index (i,j,k,1) to world (x,y,z,1) in mm. Column norms of the 3x3
// block must equal the spacing.
struct Geometry {
    std::array<int, 3> dims{0, 0, 0};
    Vec3 spacing{1.0, 1.0, 1.0};
    Affine affine;

    [[nodiscard]] std::size_t nvox() const {
        return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
               static_cast<std::size_t>(dims[2]);
    }

    [[nodiscard]] std::size_t index(int i, int j, int k) const {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(dims[0]) *
                   (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(k));
    }

    [[nodiscard]] bool contains(int i, int j, int k) const {
        return i >= 0 && j >= 0 && k >= 0 && i < dims[0] && j < dims[1] && k < dims[2];
    }

    [[nodiscard]] Vec3 voxel_to_world(const Vec3& ijk) const { return affine.apply(ijk); }

    [[nodiscard]] Vec3 world_to_voxel(const Vec3& xyz) const { return affine.inverse().apply(xyz); }

    void validate() const {
        require(dims[0] > 0 && dims[1] > 0 && dims[2] > 0, ErrorCode::invalid_volume, "non-positive dims");
        require(spacing[0] > 0 && spacing[1] > 0 && spacing[2] > 0, ErrorCode::invalid_volume,
                "non-positive spacing");
        require(std::abs(affine.det3()) > 1e-12, ErrorCode::singular_affine, "degenerate affine");
        for (int c = 0; c < 3; ++c) {
            require(std::abs(norm(affine.column(c)) - spacing[c]) <= 1e-6, ErrorCode::invalid_volume,
                    "affine column norm disagrees with spacing");
        }
    }

    [[nodiscard]] bool same_grid(const Geometry& o, double tol = 1e-5) const {
        return dims == o.dims && affine.almost_equal(o.affine, tol);
    }

    static Geometry axis_aligned(std::array<int, 3> dims, Vec3 spacing, Vec3 origin) {
        Geometry g;
        g.dims = dims;
        g.spacing = spacing;
        g.affine = Affine::scaling_translation(spacing, origin);
        return g;
    }
};

// Axis-aligned world bounding box of voxel centers.
struct WorldExtent {
    Vec3 lo{0, 0, 0};
    Vec3 hi{0, 0, 0};
};

[[nodiscard]] inline WorldExtent world_extent(const Geometry& g) {
    g.validate();
    WorldExtent e;
    bool first = true;
    for (int ci = 0; ci < 2; ++ci)
        for (int cj = 0; cj < 2; ++cj)
            for (int ck = 0; ck < 2; ++ck) {
                const Vec3 corner = {ci ? double(g.dims[0] - 1) : 0.0, cj ? double(g.dims[1] - 1) : 0.0,
                                     ck ? double(g.dims[2] - 1) : 0.0};
                const Vec3 w = g.voxel_to_world(corner);
                if (first) {
                    e.lo = e.hi = w;
                    first = false;
                } else {
                    for (int a = 0; a < 3; ++a) {
                        e.lo[a] = std::min(e.lo[a], w[a]);
                        e.hi[a] = std::max(e.hi[a], w[a]);
                    }
                }
            }
    return e;
}

}  // namespace abdmri
