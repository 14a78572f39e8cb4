#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <queue>
#include <vector>

#include "abdmri/volume.hpp"

namespace abdmri {

// 2D plane with x fastest; used for slices and per-slice QC work.
template <typename T>
struct Plane {
    int nx = 0, ny = 0;
    std::vector<T> v;

    Plane() = default;
    Plane(int w, int h, T fill = T{}) : nx(w), ny(h), v(static_cast<std::size_t>(w) * h, fill) {}

    [[nodiscard]] T& at(int x, int y) { return v[static_cast<std::size_t>(y) * nx + x]; }
    [[nodiscard]] T at(int x, int y) const { return v[static_cast<std::size_t>(y) * nx + x]; }
    [[nodiscard]] bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < nx && y < ny; }
    [[nodiscard]] std::size_t size() const { return v.size(); }
};

using Image2 = Plane<float>;
using Mask2 = Plane<std::uint8_t>;
using Mask3 = std::vector<std::uint8_t>;

// ---------------------------------------------------------------------------
// Slice extraction (image x = world-x for coronal, world-y for sagittal;
// image y = world-z for both, so "horizontal" means perpendicular to the
// body axis).
// ---------------------------------------------------------------------------

template <typename T>
[[nodiscard]] Plane<T> coronal_slice(const std::vector<T>& ch, const Geometry& g, int j) {
    Plane<T> out(g.dims[0], g.dims[2]);
    for (int k = 0; k < g.dims[2]; ++k)
        for (int i = 0; i < g.dims[0]; ++i) out.at(i, k) = ch[g.index(i, j, k)];
    return out;
}

template <typename T>
[[nodiscard]] Plane<T> sagittal_slice(const std::vector<T>& ch, const Geometry& g, int i) {
    Plane<T> out(g.dims[1], g.dims[2]);
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j) out.at(j, k) = ch[g.index(i, j, k)];
    return out;
}

// ---------------------------------------------------------------------------
// Separable box filtering along one axis of a 3D array (truncated windows,
// normalized by in-bounds count). Three passes approximate a Gaussian.
// ---------------------------------------------------------------------------

namespace detail {

inline void box_mean_axis(std::vector<float>& a, const std::array<int, 3>& dims, int axis, int radius) {
    if (radius <= 0) return;
    const int n = dims[axis];
    const std::size_t stride = axis == 0 ? 1
                             : axis == 1 ? static_cast<std::size_t>(dims[0])
                                         : static_cast<std::size_t>(dims[0]) * dims[1];
    const int n0 = axis == 0 ? dims[1] : dims[0];
    const int n1 = axis == 2 ? dims[1] : dims[2];
    const std::size_t s0 = axis == 0 ? static_cast<std::size_t>(dims[0]) : 1;
    const std::size_t s1 = axis == 2 ? static_cast<std::size_t>(dims[0])
                                     : static_cast<std::size_t>(dims[0]) * dims[1];
    std::vector<float> line(static_cast<std::size_t>(n));
    for (int b = 0; b < n1; ++b)
        for (int a0 = 0; a0 < n0; ++a0) {
            float* base = a.data() + s0 * static_cast<std::size_t>(a0) + s1 * static_cast<std::size_t>(b);
            double run = 0.0;
            for (int t = 0; t < std::min(radius + 1, n); ++t) run += base[stride * static_cast<std::size_t>(t)];
            for (int t = 0; t < n; ++t) {
                const int lo = std::max(0, t - radius);
                const int hi = std::min(n - 1, t + radius);
                line[static_cast<std::size_t>(t)] = static_cast<float>(run / double(hi - lo + 1));
                if (t + radius + 1 < n) run += base[stride * static_cast<std::size_t>(t + radius + 1)];
                if (t - radius >= 0) run -= base[stride * static_cast<std::size_t>(t - radius)];
            }
            for (int t = 0; t < n; ++t) base[stride * static_cast<std::size_t>(t)] = line[static_cast<std::size_t>(t)];
        }
}

[[nodiscard]] inline int box_radius_for_sigma(double sigma_vox) {
    // three box passes of width 2r+1 give variance 3*((2r+1)^2 - 1)/12
    const double w = std::sqrt(4.0 * sigma_vox * sigma_vox + 1.0);
    return std::max(0, static_cast<int>(std::lround((w - 1.0) / 2.0)));
}

}  // namespace detail

// Fast large-kernel Gaussian approximation (3 box passes per axis), with the
// per-axis sigma given in voxels.
inline void gaussian_blur_3d(std::vector<float>& a, const std::array<int, 3>& dims, const Vec3& sigma_vox) {
    for (int axis = 0; axis < 3; ++axis) {
        const int r = detail::box_radius_for_sigma(sigma_vox[axis]);
        for (int pass = 0; pass < 3; ++pass) detail::box_mean_axis(a, dims, axis, r);
    }
}

// Mask-weighted smoothing: smooth(v*m)/smooth(m); voxels far from the mask
// get zero.
[[nodiscard]] inline std::vector<float> masked_gaussian_3d(const std::vector<float>& v, const Mask3& mask,
                                                           const std::array<int, 3>& dims, const Vec3& sigma_vox) {
    std::vector<float> num(v.size()), den(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        num[i] = mask[i] ? v[i] : 0.0f;
        den[i] = mask[i] ? 1.0f : 0.0f;
    }
    gaussian_blur_3d(num, dims, sigma_vox);
    gaussian_blur_3d(den, dims, sigma_vox);
    std::vector<float> out(v.size(), 0.0f);
    for (std::size_t i = 0; i < v.size(); ++i)
        if (den[i] > 1e-6f) out[i] = num[i] / den[i];
    return out;
}

// Local mean over a (2r+1)^3 truncated box, used by adaptive thresholding.
[[nodiscard]] inline std::vector<float> local_mean_3d(const std::vector<float>& v, const std::array<int, 3>& dims,
                                                      int radius) {
    std::vector<float> out = v;
    for (int axis = 0; axis < 3; ++axis) detail::box_mean_axis(out, dims, axis, radius);
    return out;
}

// ---------------------------------------------------------------------------
// 2D filtering (Canny support).
// ---------------------------------------------------------------------------

[[nodiscard]] inline Image2 gaussian_blur_2d(const Image2& img, double sigma) {
    if (sigma <= 0.0) return img;
    const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kern(static_cast<std::size_t>(2 * r + 1));
    for (int t = -r; t <= r; ++t) kern[static_cast<std::size_t>(t + r)] = std::exp(-0.5 * t * t / (sigma * sigma));

    Image2 tmp(img.nx, img.ny), out(img.nx, img.ny);
    for (int y = 0; y < img.ny; ++y)
        for (int x = 0; x < img.nx; ++x) {
            double acc = 0.0, wsum = 0.0;
            for (int t = -r; t <= r; ++t) {
                const int xx = x + t;
                if (xx < 0 || xx >= img.nx) continue;
                const double w = kern[static_cast<std::size_t>(t + r)];
                acc += w * img.at(xx, y);
                wsum += w;
            }
            tmp.at(x, y) = static_cast<float>(acc / wsum);
        }
    for (int y = 0; y < img.ny; ++y)
        for (int x = 0; x < img.nx; ++x) {
            double acc = 0.0, wsum = 0.0;
            for (int t = -r; t <= r; ++t) {
                const int yy = y + t;
                if (yy < 0 || yy >= img.ny) continue;
                const double w = kern[static_cast<std::size_t>(t + r)];
                acc += w * tmp.at(x, yy);
                wsum += w;
            }
            out.at(x, y) = static_cast<float>(acc / wsum);
        }
    return out;
}

// ---------------------------------------------------------------------------
// Connected components.
// ---------------------------------------------------------------------------

struct Labels2 {
    Plane<std::int32_t> label;  // 0 = background
    std::vector<std::size_t> count;  // count[l-1] = size of component l
};

[[nodiscard]] inline Labels2 connected_components_2d(const Mask2& mask, bool eight_connected = true) {
    Labels2 out;
    out.label = Plane<std::int32_t>(mask.nx, mask.ny, 0);
    std::int32_t next = 0;
    std::vector<std::pair<int, int>> stack;
    for (int y0 = 0; y0 < mask.ny; ++y0)
        for (int x0 = 0; x0 < mask.nx; ++x0) {
            if (!mask.at(x0, y0) || out.label.at(x0, y0)) continue;
            ++next;
            std::size_t n = 0;
            stack.push_back({x0, y0});
            out.label.at(x0, y0) = next;
            while (!stack.empty()) {
                auto [x, y] = stack.back();
                stack.pop_back();
                ++n;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dx == 0 && dy == 0) continue;
                        if (!eight_connected && dx != 0 && dy != 0) continue;
                        const int xx = x + dx, yy = y + dy;
                        if (!mask.contains(xx, yy) || !mask.at(xx, yy) || out.label.at(xx, yy)) continue;
                        out.label.at(xx, yy) = next;
                        stack.push_back({xx, yy});
                    }
            }
            out.count.push_back(n);
        }
    return out;
}

struct Labels3 {
    std::vector<std::int32_t> label;  // 0 = background
    std::vector<std::size_t> count;
};

// 26-connected labeling.
[[nodiscard]] inline Labels3 connected_components_3d(const Mask3& mask, const std::array<int, 3>& dims) {
    Labels3 out;
    out.label.assign(mask.size(), 0);
    const auto idx = [&](int i, int j, int k) {
        return static_cast<std::size_t>(i) +
               static_cast<std::size_t>(dims[0]) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * k);
    };
    std::int32_t next = 0;
    std::vector<std::array<int, 3>> stack;
    for (int k0 = 0; k0 < dims[2]; ++k0)
        for (int j0 = 0; j0 < dims[1]; ++j0)
            for (int i0 = 0; i0 < dims[0]; ++i0) {
                const std::size_t p0 = idx(i0, j0, k0);
                if (!mask[p0] || out.label[p0]) continue;
                ++next;
                std::size_t n = 0;
                stack.push_back({i0, j0, k0});
                out.label[p0] = next;
                while (!stack.empty()) {
                    auto [i, j, k] = stack.back();
                    stack.pop_back();
                    ++n;
                    for (int dk = -1; dk <= 1; ++dk)
                        for (int dj = -1; dj <= 1; ++dj)
                            for (int di = -1; di <= 1; ++di) {
                                if (di == 0 && dj == 0 && dk == 0) continue;
                                const int ii = i + di, jj = j + dj, kk = k + dk;
                                if (ii < 0 || jj < 0 || kk < 0 || ii >= dims[0] || jj >= dims[1] || kk >= dims[2])
                                    continue;
                                const std::size_t p = idx(ii, jj, kk);
                                if (!mask[p] || out.label[p]) continue;
                                out.label[p] = next;
                                stack.push_back({ii, jj, kk});
                            }
                }
                out.count.push_back(n);
            }
    return out;
}

[[nodiscard]] inline Mask3 largest_component_3d(const Mask3& mask, const std::array<int, 3>& dims,
                                                int* component_count = nullptr) {
    const Labels3 lab = connected_components_3d(mask, dims);
    if (component_count) *component_count = static_cast<int>(lab.count.size());
    Mask3 out(mask.size(), 0);
    if (lab.count.empty()) return out;
    const auto best =
        1 + static_cast<std::int32_t>(std::max_element(lab.count.begin(), lab.count.end()) - lab.count.begin());
    for (std::size_t i = 0; i < mask.size(); ++i) out[i] = lab.label[i] == best ? 1 : 0;
    return out;
}

// ---------------------------------------------------------------------------
// Morphology (ball/disk structuring elements, voxel units).
// ---------------------------------------------------------------------------

namespace detail {

[[nodiscard]] inline std::vector<std::array<int, 3>> ball_offsets(int r) {
    std::vector<std::array<int, 3>> off;
    for (int dk = -r; dk <= r; ++dk)
        for (int dj = -r; dj <= r; ++dj)
            for (int di = -r; di <= r; ++di)
                if (di * di + dj * dj + dk * dk <= r * r) off.push_back({di, dj, dk});
    return off;
}

[[nodiscard]] inline std::vector<std::array<int, 2>> disk_offsets(int r) {
    std::vector<std::array<int, 2>> off;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
            if (dx * dx + dy * dy <= r * r) off.push_back({dx, dy});
    return off;
}

}  // namespace detail

[[nodiscard]] inline Mask3 dilate_3d(const Mask3& mask, const std::array<int, 3>& dims, int r) {
    const auto off = detail::ball_offsets(r);
    Mask3 out(mask.size(), 0);
    std::size_t p = 0;
    for (int k = 0; k < dims[2]; ++k)
        for (int j = 0; j < dims[1]; ++j)
            for (int i = 0; i < dims[0]; ++i, ++p) {
                for (const auto& d : off) {
                    const int ii = i + d[0], jj = j + d[1], kk = k + d[2];
                    if (ii < 0 || jj < 0 || kk < 0 || ii >= dims[0] || jj >= dims[1] || kk >= dims[2]) continue;
                    if (mask[static_cast<std::size_t>(ii) +
                             static_cast<std::size_t>(dims[0]) *
                                 (static_cast<std::size_t>(jj) + static_cast<std::size_t>(dims[1]) * kk)]) {
                        out[p] = 1;
                        break;
                    }
                }
            }
    return out;
}

[[nodiscard]] inline Mask3 erode_3d(const Mask3& mask, const std::array<int, 3>& dims, int r) {
    const auto off = detail::ball_offsets(r);
    Mask3 out(mask.size(), 0);
    std::size_t p = 0;
    for (int k = 0; k < dims[2]; ++k)
        for (int j = 0; j < dims[1]; ++j)
            for (int i = 0; i < dims[0]; ++i, ++p) {
                if (!mask[p]) continue;
                bool all = true;
                for (const auto& d : off) {
                    const int ii = i + d[0], jj = j + d[1], kk = k + d[2];
                    if (ii < 0 || jj < 0 || kk < 0 || ii >= dims[0] || jj >= dims[1] || kk >= dims[2]) continue;
                    if (!mask[static_cast<std::size_t>(ii) +
                              static_cast<std::size_t>(dims[0]) *
                                  (static_cast<std::size_t>(jj) + static_cast<std::size_t>(dims[1]) * kk)]) {
                        all = false;
                        break;
                    }
                }
                out[p] = all ? 1 : 0;
            }
    return out;
}

[[nodiscard]] inline Mask3 close_3d(const Mask3& mask, const std::array<int, 3>& dims, int r) {
    return erode_3d(dilate_3d(mask, dims, r), dims, r);
}

[[nodiscard]] inline Mask2 erode_2d(const Mask2& mask, int r) {
    const auto off = detail::disk_offsets(r);
    Mask2 out(mask.nx, mask.ny, 0);
    for (int y = 0; y < mask.ny; ++y)
        for (int x = 0; x < mask.nx; ++x) {
            if (!mask.at(x, y)) continue;
            bool all = true;
            for (const auto& d : off) {
                const int xx = x + d[0], yy = y + d[1];
                if (!mask.contains(xx, yy)) continue;
                if (!mask.at(xx, yy)) {
                    all = false;
                    break;
                }
            }
            out.at(x, y) = all ? 1 : 0;
        }
    return out;
}

[[nodiscard]] inline Mask2 dilate_2d(const Mask2& mask, int r) {
    const auto off = detail::disk_offsets(r);
    Mask2 out(mask.nx, mask.ny, 0);
    for (int y = 0; y < mask.ny; ++y)
        for (int x = 0; x < mask.nx; ++x) {
            for (const auto& d : off) {
                const int xx = x + d[0], yy = y + d[1];
                if (mask.contains(xx, yy) && mask.at(xx, yy)) {
                    out.at(x, y) = 1;
                    break;
                }
            }
        }
    return out;
}

// Fills enclosed background regions: anything not reachable from the border
// through background becomes foreground.
[[nodiscard]] inline Mask2 fill_holes_2d(const Mask2& mask) {
    Mask2 reach(mask.nx, mask.ny, 0);
    std::vector<std::pair<int, int>> stack;
    const auto push = [&](int x, int y) {
        if (mask.contains(x, y) && !mask.at(x, y) && !reach.at(x, y)) {
            reach.at(x, y) = 1;
            stack.push_back({x, y});
        }
    };
    for (int x = 0; x < mask.nx; ++x) {
        push(x, 0);
        push(x, mask.ny - 1);
    }
    for (int y = 0; y < mask.ny; ++y) {
        push(0, y);
        push(mask.nx - 1, y);
    }
    while (!stack.empty()) {
        auto [x, y] = stack.back();
        stack.pop_back();
        push(x + 1, y);
        push(x - 1, y);
        push(x, y + 1);
        push(x, y - 1);
    }
    Mask2 out(mask.nx, mask.ny, 0);
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = (mask.v[i] || !reach.v[i]) ? 1 : 0;
    return out;
}

}  // namespace abdmri
