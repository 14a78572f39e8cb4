#pragma once

#include <cmath>
#include <vector>

#include "abdmri/config.hpp"
#include "abdmri/image_ops.hpp"
#include "abdmri/stats.hpp"
#include "abdmri/volume.hpp"

namespace abdmri {

// Smooth multiplicative gain with a validity mask. Unit geometric mean inside
// the mask.
struct BiasField {
    Volume field;  // strictly positive inside mask
    Mask3 mask;
};

namespace detail {

// Third-order polynomial basis in mask-bbox-normalized coordinates: 20 terms.
inline void poly3_terms(double x, double y, double z, double* t) {
    int n = 0;
    for (int dx = 0; dx <= 3; ++dx)
        for (int dy = 0; dy + dx <= 3; ++dy)
            for (int dz = 0; dz + dy + dx <= 3; ++dz)
                t[n++] = std::pow(x, dx) * std::pow(y, dy) * std::pow(z, dz);
}

inline constexpr int kPoly3Terms = 20;

struct PolyFit3 {
    std::vector<double> coef;
    Vec3 lo{0, 0, 0}, scale{1, 1, 1};

    [[nodiscard]] double eval(int i, int j, int k) const {
        double t[kPoly3Terms];
        poly3_terms((i - lo[0]) * scale[0] - 1.0, (j - lo[1]) * scale[1] - 1.0, (k - lo[2]) * scale[2] - 1.0, t);
        double v = 0.0;
        for (int n = 0; n < kPoly3Terms; ++n) v += coef[static_cast<std::size_t>(n)] * t[n];
        return v;
    }
};

// Least-squares fit of a 3rd-order polynomial to `v` over the mask; keeps the
// field model global and smooth where windowed smoothing suffers edge bias.
inline PolyFit3 fit_poly3(const std::vector<float>& v, const Mask3& mask, const std::array<int, 3>& dims,
                          int stride) {
    PolyFit3 fit;
    int lo[3] = {dims[0], dims[1], dims[2]}, hi[3] = {0, 0, 0};
    std::size_t p = 0;
    for (int k = 0; k < dims[2]; ++k)
        for (int j = 0; j < dims[1]; ++j)
            for (int i = 0; i < dims[0]; ++i, ++p)
                if (mask[p]) {
                    lo[0] = std::min(lo[0], i); hi[0] = std::max(hi[0], i);
                    lo[1] = std::min(lo[1], j); hi[1] = std::max(hi[1], j);
                    lo[2] = std::min(lo[2], k); hi[2] = std::max(hi[2], k);
                }
    require(lo[0] <= hi[0], ErrorCode::empty_mask, "empty mask");
    for (int a = 0; a < 3; ++a) {
        fit.lo[a] = lo[a];
        fit.scale[a] = hi[a] > lo[a] ? 2.0 / (hi[a] - lo[a]) : 1.0;
    }

    std::vector<double> ata(kPoly3Terms * kPoly3Terms, 0.0), atb(kPoly3Terms, 0.0);
    double t[kPoly3Terms];
    for (int k = 0; k < dims[2]; k += stride)
        for (int j = 0; j < dims[1]; j += stride)
            for (int i = 0; i < dims[0]; i += stride) {
                const std::size_t q = static_cast<std::size_t>(i) +
                                      static_cast<std::size_t>(dims[0]) *
                                          (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims[1]) * k);
                if (!mask[q]) continue;
                poly3_terms((i - fit.lo[0]) * fit.scale[0] - 1.0, (j - fit.lo[1]) * fit.scale[1] - 1.0,
                            (k - fit.lo[2]) * fit.scale[2] - 1.0, t);
                for (int a = 0; a < kPoly3Terms; ++a) {
                    atb[static_cast<std::size_t>(a)] += t[a] * v[q];
                    for (int b = 0; b <= a; ++b)
                        ata[static_cast<std::size_t>(a) * kPoly3Terms + b] += t[a] * t[b];
                }
            }
    for (int a = 0; a < kPoly3Terms; ++a) {
        ata[static_cast<std::size_t>(a) * kPoly3Terms + a] *= 1.0 + 1e-9;  // ridge jitter
        for (int b = a + 1; b < kPoly3Terms; ++b)
            ata[static_cast<std::size_t>(a) * kPoly3Terms + b] = ata[static_cast<std::size_t>(b) * kPoly3Terms + a];
    }
    require(solve_spd(ata, atb, kPoly3Terms, fit.coef), ErrorCode::empty_mask,
            "degenerate polynomial fit (mask too small)");
    return fit;
}

}  // namespace detail

// Iterative log-domain residual smoothing: repeatedly estimate the remaining
// low-frequency component of log(vol) inside the mask (Gaussian blur followed
// by a 3rd-order polynomial projection), fold it into the field, and stop when
// the update becomes negligible. The field is normalized to unit geometric
// mean over the mask.
inline BiasField estimate_bias_field(const Volume& vol, const Mask3& mask, const BiasConfig& cfg = {}) {
    const auto& dims = vol.geom.dims;
    const std::vector<float>& v = vol.data();
    std::size_t mask_count = 0;
    for (const auto m : mask) mask_count += m ? 1u : 0u;
    require(mask_count > 0, ErrorCode::empty_mask, "bias mask has no voxels");

    float vmax = 0.0f;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (mask[i]) vmax = std::max(vmax, v[i]);
    const float eps = std::max(vmax * 1e-5f, 1e-20f);

    std::vector<float> logv(v.size(), 0.0f);
    for (std::size_t i = 0; i < v.size(); ++i)
        if (mask[i]) logv[i] = std::log(std::max(v[i], eps));

    const double sigma_mm = cfg.fwhm_mm / 2.3548200450309493;
    const Vec3 sigma_vox = {sigma_mm / vol.geom.spacing[0], sigma_mm / vol.geom.spacing[1],
                            sigma_mm / vol.geom.spacing[2]};

    std::vector<float> logfield(v.size(), 0.0f);
    std::vector<float> work(v.size(), 0.0f);
    const int poly_stride = dims[0] * dims[1] * dims[2] > 2'000'000 ? 2 : 1;

    for (int it = 0; it < cfg.max_iterations; ++it) {
        for (std::size_t i = 0; i < v.size(); ++i) work[i] = mask[i] ? logv[i] - logfield[i] : 0.0f;
        std::vector<float> smooth = masked_gaussian_3d(work, mask, dims, sigma_vox);
        const detail::PolyFit3 poly = detail::fit_poly3(smooth, mask, dims, poly_stride);

        double mean = 0.0, rms = 0.0;
        std::size_t p = 0;
        for (int k = 0; k < dims[2]; ++k)
            for (int j = 0; j < dims[1]; ++j)
                for (int i = 0; i < dims[0]; ++i, ++p)
                    if (mask[p]) {
                        const double u = poly.eval(i, j, k);
                        work[p] = static_cast<float>(u);
                        mean += u;
                    }
        mean /= double(mask_count);
        p = 0;
        for (int k = 0; k < dims[2]; ++k)
            for (int j = 0; j < dims[1]; ++j)
                for (int i = 0; i < dims[0]; ++i, ++p)
                    if (mask[p]) {
                        const double u = work[p] - mean;
                        logfield[p] += static_cast<float>(u);
                        rms += u * u;
                    }
        rms = std::sqrt(rms / double(mask_count));
        if (rms < cfg.update_rms_tol) break;
    }

    // unit geometric mean inside the mask
    double lmean = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (mask[i]) lmean += logfield[i];
    lmean /= double(mask_count);

    BiasField out;
    out.mask = mask;
    out.field = Volume::scalar(vol.geom, ElementKind::float32, "bias", 1.0f);
    for (std::size_t i = 0; i < v.size(); ++i)
        if (mask[i]) out.field.real[0][i] = std::exp(logfield[i] - static_cast<float>(lmean));
    return out;
}

// Voxelwise division by the field inside its mask; identity outside.
[[nodiscard]] inline Volume apply_bias_field(const Volume& vol, const BiasField& bias) {
    require(vol.geom.same_grid(bias.field.geom), ErrorCode::geometry_mismatch,
            "bias field grid differs from volume grid");
    Volume out = vol;
    const auto& f = bias.field.real[0];
    for (auto& ch : out.real)
        for (std::size_t i = 0; i < ch.size(); ++i)
            if (bias.mask[i]) ch[i] /= f[i];
    return out;
}

// Threshold mask used for bias estimation (fraction of the 99th percentile).
[[nodiscard]] inline Mask3 intensity_mask(const Volume& vol, double threshold_frac) {
    const auto& v = vol.data();
    std::vector<float> nonzero;
    nonzero.reserve(v.size() / 4);
    for (const float x : v)
        if (x > 0.0f) nonzero.push_back(x);
    if (nonzero.empty()) return Mask3(v.size(), 0);
    const float thr = static_cast<float>(threshold_frac) * percentile(std::move(nonzero), 99.0);
    Mask3 mask(v.size(), 0);
    for (std::size_t i = 0; i < v.size(); ++i) mask[i] = v[i] > thr ? 1 : 0;
    return mask;
}

}  // namespace abdmri
