#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "abdmri/assembly.hpp"
#include "abdmri/config.hpp"
#include "abdmri/landmarks.hpp"
#include "abdmri/nifti.hpp"
#include "abdmri/quantify.hpp"
#include "abdmri/rng.hpp"
#include "abdmri/swap.hpp"
#include "abdmri/volume.hpp"

namespace abdmri::phantom {

// ---------------------------------------------------------------------------
// Anatomy model: a connected body (neck, shoulder flare, torso, legs) with a
// subcutaneous fat shell, liver/pancreas regions, and water-bright bone blobs
// at the six joints. Everything is analytic, so ground truth is exact on any
// grid. World frame: x to the subject's left, z superior with the volume top
// at z = 0.
// ---------------------------------------------------------------------------

struct AnatomyConfig {
    std::string sex = "F";
    double height_mm = 1750.0;
    double lateral_scale = 1.0;
    double fov_shift_mm = 0.0;  // positive moves the anatomy superiorly

    double neck_radius_mm = 55.0;
    double torso_half_width_mm = 140.0;
    double torso_half_depth_mm = 95.0;
    double leg_half_width_mm = 60.0;
    double leg_half_depth_mm = 90.0;
    double leg_center_mm = 45.0;

    double fat_shell_mm = 10.0;
    double interior_fat_fraction = 0.12;
    double shell_fat_fraction = 0.90;
    double base_intensity = 400.0;

    double bone_radius_mm = 15.0;
    double bone_water_gain = 1.6;

    double liver_pdff_pct = 5.0;
    double liver_r2star = 40.0;

    bool head_in_fov = false;
    bool uniform_tissue = false;  // no shell/organs/bones: constant intensity body
};

// z positions derived from subject height (fractions calibrated so nominal
// heights keep knees inside the 1107 mm field of view and tall subjects do
// not).
struct AnatomyFrame {
    double neck_top_z, flare_top_z, flare_bottom_z;
    double shoulder_z, hip_z, knee_z;
    double leg_start_z, crotch_z;

    static AnatomyFrame from(const AnatomyConfig& a) {
        AnatomyFrame f{};
        const double h = a.height_mm, s = a.fov_shift_mm;
        f.neck_top_z = 60.0 + s;
        f.shoulder_z = -0.055 * h + s;
        f.flare_top_z = f.shoulder_z + 70.0;
        f.flare_bottom_z = f.shoulder_z + 10.0;
        f.hip_z = -0.315 * h + s;
        f.crotch_z = -0.42 * h + s;
        f.leg_start_z = f.crotch_z + 60.0;
        f.knee_z = -0.585 * h + s;
        return f;
    }
};

[[nodiscard]] inline std::array<Vec3, 6> joint_positions(const AnatomyConfig& a) {
    const AnatomyFrame f = AnatomyFrame::from(a);
    const double ls = a.lateral_scale;
    return {{
        {-110.0 * ls, 0.0, f.shoulder_z},  // shoulder_right (subject right = -x)
        {+110.0 * ls, 0.0, f.shoulder_z},  // shoulder_left
        {-80.0 * ls, 0.0, f.hip_z},        // hip_right
        {+80.0 * ls, 0.0, f.hip_z},        // hip_left
        {-a.leg_center_mm * ls, 0.0, f.knee_z},  // knee_right
        {+a.leg_center_mm * ls, 0.0, f.knee_z},  // knee_left
    }};
}

struct LiverSpec {
    Vec3 center{-55.0, 10.0, 0.0};  // z filled from the frame
    Vec3 semi{75.0, 60.0, 80.0};
};

[[nodiscard]] inline LiverSpec liver_spec(const AnatomyConfig& a) {
    const AnatomyFrame f = AnatomyFrame::from(a);
    LiverSpec l;
    l.center[0] *= a.lateral_scale;
    l.center[2] = f.shoulder_z - 0.145 * a.height_mm;
    l.semi[2] = 0.046 * a.height_mm;
    return l;
}

struct PancreasSpec {
    Vec3 center{20.0, 8.0, 0.0};
    Vec3 semi{45.0, 18.0, 12.0};
};

[[nodiscard]] inline PancreasSpec pancreas_spec(const AnatomyConfig& a) {
    const LiverSpec l = liver_spec(a);
    PancreasSpec p;
    p.center[0] *= a.lateral_scale;
    p.center[2] = l.center[2] - 70.0;
    return p;
}

struct TissueSample {
    bool inside = false;
    double fat_fraction = 0.0;
    double water_gain = 1.0;
};

namespace detail {

[[nodiscard]] inline double smoothstep(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

struct BodySection {
    bool any = false;
    int parts = 1;          // 1 = single ellipse, 2 = overlapping leg pair
    double cx = 0.0;        // lateral offset of each leg center
    double ax = 0.0, ay = 0.0;
};

[[nodiscard]] inline BodySection body_section(const AnatomyConfig& a, const AnatomyFrame& f, double z) {
    BodySection s;
    const double ls = a.lateral_scale;
    if (z > f.neck_top_z || z < f.knee_z - 420.0) return s;
    s.any = true;
    if (a.uniform_tissue) {  // uniform preset: a tapered cylinder, no legs
        if (z > f.flare_top_z) {
            s.ax = s.ay = a.neck_radius_mm * ls;
        } else if (z > f.flare_bottom_z) {
            const double t = smoothstep((f.flare_top_z - z) / (f.flare_top_z - f.flare_bottom_z));
            s.ax = (a.neck_radius_mm + t * (a.torso_half_width_mm - a.neck_radius_mm)) * ls;
            s.ay = (a.neck_radius_mm + t * (a.torso_half_depth_mm - a.neck_radius_mm)) * ls;
        } else {
            s.ax = a.torso_half_width_mm * ls;
            s.ay = a.torso_half_depth_mm * ls;
        }
        return s;
    }
    if (z > f.flare_top_z) {
        s.ax = s.ay = a.neck_radius_mm * ls;
    } else if (z > f.flare_bottom_z) {
        const double t = smoothstep((f.flare_top_z - z) / (f.flare_top_z - f.flare_bottom_z));
        s.ax = (a.neck_radius_mm + t * (a.torso_half_width_mm - a.neck_radius_mm)) * ls;
        s.ay = (a.neck_radius_mm + t * (a.torso_half_depth_mm - a.neck_radius_mm)) * ls;
    } else if (z > f.leg_start_z) {
        s.ax = a.torso_half_width_mm * ls;
        s.ay = a.torso_half_depth_mm * ls;
    } else {
        // gradual split into two overlapping leg ellipses
        const double t = z > f.crotch_z ? smoothstep((f.leg_start_z - z) / (f.leg_start_z - f.crotch_z)) : 1.0;
        s.parts = 2;
        s.cx = t * a.leg_center_mm * ls;
        s.ax = (a.torso_half_width_mm + t * (a.leg_half_width_mm - a.torso_half_width_mm)) * ls;
        s.ay = (a.torso_half_depth_mm + t * (a.leg_half_depth_mm - a.torso_half_depth_mm)) * ls;
    }
    return s;
}

}  // namespace detail

// Evaluates the tissue model at a world point.
[[nodiscard]] inline TissueSample sample_tissue(const AnatomyConfig& a, const AnatomyFrame& f, double x, double y,
                                                double z) {
    TissueSample out;
    const double ls = a.lateral_scale;

    double rho = 2.0;
    double r_min = 1.0;
    const detail::BodySection s = detail::body_section(a, f, z);
    if (s.any && s.ax > 0.0 && s.ay > 0.0) {
        for (int part = 0; part < s.parts; ++part) {
            const double cx = s.parts == 2 ? (part == 0 ? -s.cx : s.cx) : 0.0;
            const double dx = (x - cx) / s.ax, dy = y / s.ay;
            rho = std::min(rho, std::sqrt(dx * dx + dy * dy));
        }
        r_min = std::min(s.ax, s.ay);
    }

    if (a.head_in_fov) {
        const double dz = (z - (f.neck_top_z - 30.0)) / 80.0;
        const double dx = x / (90.0 * ls), dy = y / (110.0 * ls);
        const double head_rho = std::sqrt(dx * dx + dy * dy + dz * dz);
        if (head_rho < rho) {
            rho = head_rho;
            r_min = 80.0 * ls;
        }
    }

    // joint bones are part of the body
    bool in_bone = false;
    if (!a.uniform_tissue) {
        for (const Vec3& b : joint_positions(a)) {
            const double dx = x - b[0], dy = y - b[1], dz = z - b[2];
            if (dx * dx + dy * dy + dz * dz <= a.bone_radius_mm * a.bone_radius_mm) {
                in_bone = true;
                break;
            }
        }
    }

    if (rho > 1.0 && !in_bone) return out;
    out.inside = true;

    if (a.uniform_tissue) {
        out.fat_fraction = a.interior_fat_fraction;
        return out;
    }
    if (in_bone) {
        out.fat_fraction = 0.02;
        out.water_gain = a.bone_water_gain;
        return out;
    }
    if (rho >= 1.0 - a.fat_shell_mm / r_min) {
        out.fat_fraction = a.shell_fat_fraction;
        return out;
    }
    out.fat_fraction = a.interior_fat_fraction;

    const LiverSpec liver = liver_spec(a);
    {
        const double dx = (x - liver.center[0]) / liver.semi[0];
        const double dy = (y - liver.center[1]) / liver.semi[1];
        const double dz = (z - liver.center[2]) / liver.semi[2];
        if (dx * dx + dy * dy + dz * dz <= 1.0) {
            out.fat_fraction = a.liver_pdff_pct / 100.0;
            return out;
        }
    }
    const PancreasSpec panc = pancreas_spec(a);
    {
        const double dx = (x - panc.center[0]) / panc.semi[0];
        const double dy = (y - panc.center[1]) / panc.semi[1];
        const double dz = (z - panc.center[2]) / panc.semi[2];
        if (dx * dx + dy * dy + dz * dz <= 1.0) out.fat_fraction = 0.10;
    }
    return out;
}

[[nodiscard]] inline bool inside_body(const AnatomyConfig& a, const AnatomyFrame& f, double x, double y, double z) {
    return sample_tissue(a, f, x, y, z).inside;
}

// Analytic masks on arbitrary grids (the oracle side of QC tests).
[[nodiscard]] inline Mask3 body_mask_on(const AnatomyConfig& a, const Geometry& g) {
    const AnatomyFrame f = AnatomyFrame::from(a);
    Mask3 mask(g.nvox(), 0);
    std::size_t p = 0;
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i, ++p) {
                const Vec3 w = g.voxel_to_world({double(i), double(j), double(k)});
                mask[p] = inside_body(a, f, w[0], w[1], w[2]) ? 1 : 0;
            }
    return mask;
}

[[nodiscard]] inline Mask3 liver_mask_on(const AnatomyConfig& a, const Geometry& g) {
    const LiverSpec l = liver_spec(a);
    Mask3 mask(g.nvox(), 0);
    std::size_t p = 0;
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i, ++p) {
                const Vec3 w = g.voxel_to_world({double(i), double(j), double(k)});
                const double dx = (w[0] - l.center[0]) / l.semi[0];
                const double dy = (w[1] - l.center[1]) / l.semi[1];
                const double dz = (w[2] - l.center[2]) / l.semi[2];
                mask[p] = dx * dx + dy * dy + dz * dz <= 1.0 ? 1 : 0;
            }
    return mask;
}

// ---------------------------------------------------------------------------
// Defects.
// ---------------------------------------------------------------------------

enum class DefectKind { swap, dropout, notch, bias_gain, series_shift };

[[nodiscard]] inline std::string to_string(DefectKind k) {
    switch (k) {
        case DefectKind::swap:         return "swap";
        case DefectKind::dropout:      return "dropout";
        case DefectKind::notch:        return "notch";
        case DefectKind::bias_gain:    return "bias_gain";
        case DefectKind::series_shift: return "series_shift";
    }
    return "?";
}

struct Defect {
    DefectKind kind = DefectKind::swap;
    int station = 0;                       // 1..6; 0 = all stations (bias_gain)
    SwapRegion region = SwapRegion::whole; // swap
    Vec3 center{0, 0, 0};                  // dropout box, world mm
    Vec3 size{0, 0, 0};
    std::string location;                  // dropout: "chest" | "knee" | "other"
    int notch_width_voxels = 0;            // notch: lateral depth in voxels
    double notch_z_mm = 0.0;
    double notch_thickness_mm = 33.0;      // tall enough to survive mask closing
    bool notch_from_anterior = false;      // false: cut from +x (coronal view)
    double shift_dx_mm = 0.0;              // series_shift
    std::array<double, 4> gain_coeffs{0, 0, 0, 0};  // 1 + a0 x' + a1 y' + a2 z' + a3 x'y'
};

[[nodiscard]] inline Defect make_swap_defect(int station, SwapRegion region = SwapRegion::whole) {
    Defect d;
    d.kind = DefectKind::swap;
    d.station = station;
    d.region = region;
    return d;
}

[[nodiscard]] inline Defect make_notch_defect(int width_voxels, double z_mm, bool from_anterior) {
    Defect d;
    d.kind = DefectKind::notch;
    d.notch_width_voxels = width_voxels;
    d.notch_z_mm = z_mm;
    d.notch_from_anterior = from_anterior;
    return d;
}

// ---------------------------------------------------------------------------
// Dixon subject generation.
// ---------------------------------------------------------------------------

struct PhantomConfig {
    std::uint64_t seed = 1;
    AnatomyConfig anatomy;
    std::array<double, 5> overlap_mm = {32.6, 32.6, 32.6, 32.6, 32.6};
    double snr = 60.0;  // <= 0 disables noise
    std::vector<Defect> defects;

    // single-slice acquisitions
    bool liver_gre = false;
    bool liver_ideal = true;
    bool pancreas_gre = true;
    bool t1w = true;
    double liver_slice_percent = 50.0;  // intended position within the liver span
    bool pancreas_non_axial = false;
    double multiecho_snr = 50.0;
    double psi0_hz = 8.0;
    double psi_gradient_hz = 10.0;  // linear ramp across the slice
    double phi0_rad = 0.3;
};

struct PhantomTruth {
    AnatomyConfig anatomy;
    std::array<Vec3, 6> landmarks_mm{};
    std::vector<Defect> defects;
    std::array<double, 5> overlap_mm{};
    double body_center_y_mm = 0.0;
    double liver_slice_z_mm = 0.0;
    double liver_top_z_mm = 0.0, liver_bottom_z_mm = 0.0;
};

namespace detail {

[[nodiscard]] inline Geometry series_geometry(int station, double z_top, double shift_x) {
    const auto& spec = protocol::kDixonSeries[static_cast<std::size_t>(station)];
    const Vec3 spacing = {2.232, 2.232, spec.dz_mm};
    const Vec3 origin = {shift_x - 0.5 * (spec.nx - 1) * spacing[0], -0.5 * (spec.ny - 1) * spacing[1],
                         z_top - (spec.nslices - 1) * spec.dz_mm};
    return Geometry::axis_aligned({spec.nx, spec.ny, spec.nslices}, spacing, origin);
}

struct GainField {
    bool active = false;
    std::array<double, 4> c{0, 0, 0, 0};

    [[nodiscard]] double eval(double x, double y, double z) const {
        if (!active) return 1.0;
        const double xn = x / 250.0, yn = y / 200.0, zn = (z + 550.0) / 550.0;
        return std::clamp(1.0 + c[0] * xn + c[1] * yn + c[2] * zn + c[3] * xn * yn, 0.7, 1.3);
    }
};

}  // namespace detail

// Six overlapping stations with channels in = water + fat (exactly) and
// opp = |water - fat| + noise; defects injected per config and recorded in
// the truth.
inline std::pair<DixonSubject, PhantomTruth> make_dixon_phantom(const PhantomConfig& cfg) {
    require(cfg.anatomy.height_mm > 500.0 && cfg.anatomy.height_mm < 2500.0, ErrorCode::invalid_config,
            "implausible height");
    for (const Defect& d : cfg.defects)
        require(d.station >= 0 && d.station <= 6, ErrorCode::invalid_config, "bad defect station");

    const AnatomyConfig& anat = cfg.anatomy;
    const AnatomyFrame frame = AnatomyFrame::from(anat);

    PhantomTruth truth;
    truth.anatomy = anat;
    truth.landmarks_mm = joint_positions(anat);
    truth.defects = cfg.defects;
    truth.overlap_mm = cfg.overlap_mm;
    const LiverSpec liver = liver_spec(anat);
    truth.liver_top_z_mm = liver.center[2] + liver.semi[2];
    truth.liver_bottom_z_mm = liver.center[2] - liver.semi[2];

    // station placement: superior first, configured voxel-center overlaps
    std::array<double, 6> z_top{};
    z_top[0] = 0.0;
    for (int s = 1; s < 6; ++s) {
        const auto& prev = protocol::kDixonSeries[static_cast<std::size_t>(s - 1)];
        const double prev_span = (prev.nslices - 1) * prev.dz_mm;
        z_top[static_cast<std::size_t>(s)] =
            z_top[static_cast<std::size_t>(s - 1)] - prev_span + cfg.overlap_mm[static_cast<std::size_t>(s - 1)];
    }

    DixonSubject subject;
    subject.sex = anat.sex;
    subject.height_mm = anat.height_mm;

    const double sigma = cfg.snr > 0.0 ? anat.base_intensity / cfg.snr : 0.0;

    for (int s = 0; s < 6; ++s) {
        // a shifted station shows the body displaced in its own frame; the
        // stored geometry stays nominal, which is what makes it an anomaly
        double shift_x = 0.0;
        detail::GainField gain;
        for (const Defect& d : cfg.defects) {
            if (d.kind == DefectKind::series_shift && d.station == s + 1) shift_x = d.shift_dx_mm;
            if (d.kind == DefectKind::bias_gain && (d.station == 0 || d.station == s + 1)) {
                gain.active = true;
                gain.c = d.gain_coeffs;
            }
        }
        const Geometry g = detail::series_geometry(s, z_top[static_cast<std::size_t>(s)], 0.0);
        const std::size_t n = g.nvox();
        std::vector<float> water(n, 0.0f), fat(n, 0.0f);

        Rng noise(Rng::derive(cfg.seed, 100 + static_cast<std::uint64_t>(s)));
        std::size_t p = 0;
        for (int k = 0; k < g.dims[2]; ++k) {
            const double z = g.affine.at(2, 3) + g.spacing[2] * k;
            for (int j = 0; j < g.dims[1]; ++j) {
                const double y = g.affine.at(1, 3) + g.spacing[1] * j;
                for (int i = 0; i < g.dims[0]; ++i, ++p) {
                    const double xg = g.affine.at(0, 3) + g.spacing[0] * i;
                    const TissueSample t = sample_tissue(anat, frame, xg - shift_x, y, z);
                    if (!t.inside) continue;
                    const double gv = gain.eval(xg, y, z);  // the gain lives in the scanner frame
                    double w = anat.base_intensity * (1.0 - t.fat_fraction) * t.water_gain;
                    double f = anat.base_intensity * t.fat_fraction;
                    if (sigma > 0.0) {
                        w += sigma * noise.gaussian();
                        f += sigma * noise.gaussian();
                    }
                    water[p] = static_cast<float>(std::max(0.0, gv * w));
                    fat[p] = static_cast<float>(std::max(0.0, gv * f));
                }
            }
        }

        std::vector<float> in(n), opp(n);
        Rng opp_noise(Rng::derive(cfg.seed, 200 + static_cast<std::uint64_t>(s)));
        for (std::size_t q = 0; q < n; ++q) {
            in[q] = water[q] + fat[q];
            double o = std::abs(double(water[q]) - double(fat[q]));
            if (sigma > 0.0 && in[q] > 0.0f) o += sigma * opp_noise.gaussian();
            opp[q] = static_cast<float>(std::max(0.0, o));
        }

        // destructive defects: zero every channel inside the world box
        for (const Defect& d : cfg.defects) {
            if (d.kind != DefectKind::dropout && d.kind != DefectKind::notch) continue;
            Vec3 lo, hi;
            if (d.kind == DefectKind::dropout) {
                for (int a = 0; a < 3; ++a) {
                    lo[a] = d.center[a] - 0.5 * d.size[a];
                    hi[a] = d.center[a] + 0.5 * d.size[a];
                }
            } else {
                if (!d.notch_from_anterior) {
                    // cut from the +x edge of the torso, visible in the coronal slice
                    const double edge = anat.torso_half_width_mm * anat.lateral_scale;
                    const int i_edge = static_cast<int>(std::floor(edge / 2.232 + 0.5 * (g.dims[0] - 1)));
                    const double x_in = g.affine.at(0, 3) + 2.232 * (i_edge - d.notch_width_voxels + 1);
                    lo = {x_in - 1.0, -14.0, d.notch_z_mm};
                    hi = {edge + 20.0, 14.0, d.notch_z_mm + d.notch_thickness_mm};
                } else {
                    const double edge = anat.torso_half_depth_mm * anat.lateral_scale;
                    const int j_edge = static_cast<int>(std::floor(edge / 2.232 + 0.5 * (g.dims[1] - 1)));
                    const double y_in = g.affine.at(1, 3) + 2.232 * (j_edge - d.notch_width_voxels + 1);
                    lo = {-14.0, y_in - 1.0, d.notch_z_mm};
                    hi = {14.0, edge + 20.0, d.notch_z_mm + d.notch_thickness_mm};
                }
            }
            std::size_t q = 0;
            for (int k = 0; k < g.dims[2]; ++k) {
                const double z = g.affine.at(2, 3) + g.spacing[2] * k;
                for (int j = 0; j < g.dims[1]; ++j) {
                    const double y = g.affine.at(1, 3) + g.spacing[1] * j;
                    for (int i = 0; i < g.dims[0]; ++i, ++q) {
                        const double x = g.affine.at(0, 3) + g.spacing[0] * i;
                        if (x >= lo[0] && x <= hi[0] && y >= lo[1] && y <= hi[1] && z >= lo[2] && z <= hi[2]) {
                            water[q] = fat[q] = in[q] = opp[q] = 0.0f;
                        }
                    }
                }
            }
        }

        // swap injection: exchange the reconstructed fat/water labels
        for (const Defect& d : cfg.defects) {
            if (d.kind != DefectKind::swap || d.station != s + 1) continue;
            if (d.region == SwapRegion::whole) {
                std::swap(water, fat);
            } else {
                const int half = g.dims[0] / 2;
                const bool want_left = d.region == SwapRegion::left_half;
                const int i_lo = want_left ? half : 0;
                const int i_hi = want_left ? g.dims[0] : half;
                for (int k = 0; k < g.dims[2]; ++k)
                    for (int j = 0; j < g.dims[1]; ++j)
                        for (int i = i_lo; i < i_hi; ++i)
                            std::swap(water[g.index(i, j, k)], fat[g.index(i, j, k)]);
            }
        }

        DixonSeries series;
        series.label = "dixon_" + std::to_string(s + 1);
        const auto mk = [&](const char* name, std::vector<float>&& data) {
            Volume v;
            v.geom = g;
            v.kind = ElementKind::float32;
            v.names = {name};
            v.real.push_back(std::move(data));
            return v;
        };
        series.in = mk("in", std::move(in));
        series.opp = mk("opp", std::move(opp));
        series.fat = mk("fat", std::move(fat));
        series.water = mk("water", std::move(water));
        subject.series.push_back(std::move(series));
    }

    return {std::move(subject), std::move(truth)};
}

// ---------------------------------------------------------------------------
// Multiecho phantoms.
// ---------------------------------------------------------------------------

struct TileTruth {
    std::vector<double> pdff_pct;
    std::vector<double> r2star;
    std::vector<std::int32_t> tile_map;  // -1 outside, else tile index
    Geometry geom;
};

// Rectangular tile mosaic on a single axial slice; the signal model is the
// same forward model the fitter uses, which closes the oracle loop.
inline std::pair<EchoSeries, TileTruth> make_multiecho_phantom(const std::vector<double>& tile_pdffs,
                                                               const std::vector<double>& tile_r2stars,
                                                               const std::vector<double>& echo_times_ms,
                                                               double snr, std::uint64_t seed = 7,
                                                               const QuantifyConfig& qcfg = {}) {
    require(!tile_pdffs.empty() && tile_pdffs.size() == tile_r2stars.size(), ErrorCode::invalid_config,
            "tile lists must match and be nonempty");
    const int nx = protocol::kGreMatrix[0], ny = protocol::kGreMatrix[1];
    const Geometry g = Geometry::axis_aligned(
        {nx, ny, 1}, {protocol::kGreVoxelMm[0], protocol::kGreVoxelMm[1], protocol::kGreVoxelMm[2]},
        {-0.5 * (nx - 1) * protocol::kGreVoxelMm[0], -0.5 * (ny - 1) * protocol::kGreVoxelMm[1], -400.0});

    const int tiles = static_cast<int>(tile_pdffs.size());
    const int cols = static_cast<int>(std::ceil(std::sqrt(double(tiles))));
    const int rows = (tiles + cols - 1) / cols;

    const FatSpectrum spectrum(qcfg.spectrum, qcfg.field_mhz);
    EchoSeries series;
    series.volume = Volume::complex(g, echo_times_ms.size());
    series.echo_times_ms = echo_times_ms;
    series.flip_angle_deg = protocol::kGreFlipDeg;
    series.repetition_time_ms = protocol::kGreTrMs;

    TileTruth truth;
    truth.pdff_pct = tile_pdffs;
    truth.r2star = tile_r2stars;
    truth.tile_map.assign(g.nvox(), -1);
    truth.geom = g;

    const double s0 = 100.0;
    const double sigma = snr > 0.0 ? s0 / snr : 0.0;
    Rng noise(Rng::derive(seed, 11));

    for (int y = 0; y < ny; ++y)
        for (int x = 0; x < nx; ++x) {
            const int c = std::min(cols - 1, x * cols / nx);
            const int r = std::min(rows - 1, y * rows / ny);
            const int tile = r * cols + c;
            const std::size_t p = g.index(x, y, 0);
            if (tile >= tiles) continue;
            truth.tile_map[p] = tile;
            FatModelParams params;
            params.fat = s0 * tile_pdffs[static_cast<std::size_t>(tile)] / 100.0;
            params.water = s0 - params.fat;
            params.r2star = tile_r2stars[static_cast<std::size_t>(tile)];
            params.psi_hz = 0.0;
            params.phi0 = 0.3;
            const std::vector<cdouble> s = forward_signal(params, spectrum, echo_times_ms);
            for (std::size_t e = 0; e < s.size(); ++e) {
                double re = s[e].real(), im = s[e].imag();
                if (sigma > 0.0) {
                    re += sigma * noise.gaussian();
                    im += sigma * noise.gaussian();
                }
                series.volume.cplx[e][p] = cfloat{static_cast<float>(re), static_cast<float>(im)};
            }
        }
    return {std::move(series), std::move(truth)};
}

struct SliceTruth {
    Geometry geom;
    Mask3 body;
    Mask3 organ;  // liver (or pancreas) region on the slice
    double organ_pdff_pct = 0.0;
    double organ_r2star = 0.0;
};

// Single-slice acquisition through the anatomy at world height z_mm. Matrix
// and voxel size follow the requested protocol ("gre" or "ideal").
inline std::pair<EchoSeries, SliceTruth> make_organ_slice_phantom(const PhantomConfig& cfg, double z_mm,
                                                                  const std::string& protocol_kind,
                                                                  bool pancreas, std::uint64_t stream,
                                                                  const QuantifyConfig& qcfg = {}) {
    const bool ideal = protocol_kind == "ideal";
    const int nx = ideal ? protocol::kIdealMatrix[0] : protocol::kGreMatrix[0];
    const int ny = ideal ? protocol::kIdealMatrix[1] : protocol::kGreMatrix[1];
    const Vec3 vox = ideal ? Vec3{protocol::kIdealVoxelMm[0], protocol::kIdealVoxelMm[1], protocol::kIdealVoxelMm[2]}
                           : Vec3{protocol::kGreVoxelMm[0], protocol::kGreVoxelMm[1], protocol::kGreVoxelMm[2]};

    Geometry g;
    if (pancreas && cfg.pancreas_non_axial) {
        // sagittal orientation: image i -> world y, image j -> world z, slice
        // normal (image k) along world x
        Affine m = Affine::identity();
        m.at(0, 0) = 0.0; m.at(0, 1) = 0.0; m.at(0, 2) = vox[2]; m.at(0, 3) = 0.0;
        m.at(1, 0) = vox[0]; m.at(1, 1) = 0.0; m.at(1, 2) = 0.0; m.at(1, 3) = -0.5 * (nx - 1) * vox[0];
        m.at(2, 0) = 0.0; m.at(2, 1) = vox[1]; m.at(2, 2) = 0.0; m.at(2, 3) = z_mm - 0.5 * (ny - 1) * vox[1];
        g.dims = {nx, ny, 1};
        g.spacing = vox;
        g.affine = m;
    } else {
        g = Geometry::axis_aligned({nx, ny, 1}, vox,
                                   {-0.5 * (nx - 1) * vox[0], -0.5 * (ny - 1) * vox[1], z_mm});
    }

    const std::vector<double>& tes = ideal ? protocol::kIdealEchoTimesMs : protocol::kGreEchoTimesMs;
    const FatSpectrum spectrum(qcfg.spectrum, qcfg.field_mhz);
    const AnatomyFrame frame = AnatomyFrame::from(cfg.anatomy);
    const LiverSpec liver = liver_spec(cfg.anatomy);
    const PancreasSpec panc = pancreas_spec(cfg.anatomy);

    EchoSeries series;
    series.volume = Volume::complex(g, tes.size());
    series.echo_times_ms = tes;
    series.flip_angle_deg = ideal ? protocol::kIdealFlipDeg : protocol::kGreFlipDeg;
    series.repetition_time_ms = ideal ? protocol::kIdealTrMs : protocol::kGreTrMs;

    SliceTruth truth;
    truth.geom = g;
    truth.body.assign(g.nvox(), 0);
    truth.organ.assign(g.nvox(), 0);
    truth.organ_pdff_pct = pancreas ? 10.0 : cfg.anatomy.liver_pdff_pct;
    truth.organ_r2star = pancreas ? 32.0 : cfg.anatomy.liver_r2star;

    const double s0 = 150.0;
    const double sigma = cfg.multiecho_snr > 0.0 ? s0 / cfg.multiecho_snr : 0.0;
    Rng noise(Rng::derive(cfg.seed, stream));

    std::size_t p = 0;
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i, ++p) {
                const Vec3 w = g.voxel_to_world({double(i), double(j), double(k)});
                const TissueSample t = sample_tissue(cfg.anatomy, frame, w[0], w[1], w[2]);
                if (!t.inside) continue;
                truth.body[p] = 1;
                double pdff = 100.0 * t.fat_fraction;
                double r2s = 42.0;
                const auto& organ = pancreas ? panc.center : liver.center;
                const auto& semi = pancreas ? panc.semi : liver.semi;
                const double dx = (w[0] - organ[0]) / semi[0];
                const double dy = (w[1] - organ[1]) / semi[1];
                const double dz = (w[2] - organ[2]) / semi[2];
                if (dx * dx + dy * dy + dz * dz <= 1.0) {
                    truth.organ[p] = 1;
                    pdff = truth.organ_pdff_pct;
                    r2s = truth.organ_r2star;
                }
                FatModelParams params;
                params.fat = s0 * pdff / 100.0;
                params.water = s0 - params.fat;
                params.r2star = r2s;
                params.psi_hz = cfg.psi0_hz + cfg.psi_gradient_hz * (w[0] / 250.0);
                params.phi0 = cfg.phi0_rad;
                const std::vector<cdouble> s = forward_signal(params, spectrum, tes);
                for (std::size_t e = 0; e < s.size(); ++e) {
                    double re = s[e].real(), im = s[e].imag();
                    if (sigma > 0.0) {
                        re += sigma * noise.gaussian();
                        im += sigma * noise.gaussian();
                    }
                    series.volume.cplx[e][p] = cfloat{static_cast<float>(re), static_cast<float>(im)};
                }
            }
    return {std::move(series), std::move(truth)};
}

// ---------------------------------------------------------------------------
// Presets and defect helpers.
// ---------------------------------------------------------------------------

[[nodiscard]] inline PhantomConfig default_config(std::uint64_t seed = 1) {
    PhantomConfig cfg;
    cfg.seed = seed;
    return cfg;
}

// Constant-intensity tapered cylinder: the assembly seamlessness reference.
[[nodiscard]] inline PhantomConfig uniform_cylinder_config(std::uint64_t seed = 1) {
    PhantomConfig cfg;
    cfg.seed = seed;
    cfg.anatomy.uniform_tissue = true;
    cfg.anatomy.neck_radius_mm = 45.0;
    cfg.snr = 0.0;
    cfg.liver_ideal = cfg.pancreas_gre = cfg.t1w = false;
    return cfg;
}

[[nodiscard]] inline PhantomConfig tall_config(std::uint64_t seed = 1) {
    PhantomConfig cfg;
    cfg.seed = seed;
    cfg.anatomy.height_mm = 1950.0;  // knees fall below the fixed coverage
    return cfg;
}

[[nodiscard]] inline PhantomConfig high_position_config(std::uint64_t seed = 1) {
    PhantomConfig cfg;
    cfg.seed = seed;
    cfg.anatomy.fov_shift_mm = 150.0;  // shoulders above the field of view
    return cfg;
}

// Deterministic per-subject anatomy variation for suite-style tests.
inline void vary_anatomy(PhantomConfig& cfg, Rng& rng) {
    cfg.anatomy.sex = rng.bernoulli(0.5) ? "F" : "M";
    cfg.anatomy.height_mm = 1600.0 + 250.0 * rng.uniform();
    cfg.anatomy.torso_half_width_mm = 128.0 + 24.0 * rng.uniform();
    cfg.anatomy.torso_half_depth_mm = 86.0 + 18.0 * rng.uniform();
    cfg.anatomy.fat_shell_mm = 9.0 + 3.0 * rng.uniform();
    cfg.anatomy.liver_pdff_pct = 2.0 + 10.0 * rng.uniform();
}

[[nodiscard]] inline Defect make_dropout_defect(const AnatomyConfig& anat, const std::string& location) {
    const AnatomyFrame f = AnatomyFrame::from(anat);
    Defect d;
    d.kind = DefectKind::dropout;
    d.location = location;
    d.size = {22.0, 22.0, 15.0};
    if (location == "chest")
        d.center = {30.0, 0.0, -253.0 + anat.fov_shift_mm};
    else if (location == "knee")
        d.center = {anat.leg_center_mm * anat.lateral_scale, 0.0, f.knee_z + 20.0};
    else
        d.center = {0.0, 0.0, -500.0 + anat.fov_shift_mm};
    return d;
}

[[nodiscard]] inline Defect make_series_shift_defect(int station, double dx_mm) {
    Defect d;
    d.kind = DefectKind::series_shift;
    d.station = station;
    d.shift_dx_mm = dx_mm;
    return d;
}

[[nodiscard]] inline Defect make_bias_gain_defect(std::array<double, 4> coeffs, int station = 0) {
    Defect d;
    d.kind = DefectKind::bias_gain;
    d.station = station;
    d.gain_coeffs = coeffs;
    return d;
}

// ---------------------------------------------------------------------------
// Subject directory emission (the pipeline's input contract).
// ---------------------------------------------------------------------------

[[nodiscard]] inline nlohmann::json truth_json(const PhantomTruth& truth) {
    nlohmann::json j;
    j["sex"] = truth.anatomy.sex;
    j["height_mm"] = truth.anatomy.height_mm;
    j["fov_shift_mm"] = truth.anatomy.fov_shift_mm;
    j["liver_pdff_pct"] = truth.anatomy.liver_pdff_pct;
    j["liver_r2star"] = truth.anatomy.liver_r2star;
    j["body_center_y_mm"] = truth.body_center_y_mm;
    j["liver_slice_z_mm"] = truth.liver_slice_z_mm;
    j["liver_top_z_mm"] = truth.liver_top_z_mm;
    j["liver_bottom_z_mm"] = truth.liver_bottom_z_mm;
    nlohmann::json lms;
    for (int q = 0; q < 6; ++q)
        lms[kJointNames[static_cast<std::size_t>(q)]] = {truth.landmarks_mm[static_cast<std::size_t>(q)][0],
                                                         truth.landmarks_mm[static_cast<std::size_t>(q)][1],
                                                         truth.landmarks_mm[static_cast<std::size_t>(q)][2]};
    j["landmarks_mm"] = lms;
    j["overlap_mm"] = truth.overlap_mm;
    nlohmann::json defects = nlohmann::json::array();
    for (const Defect& d : truth.defects) {
        nlohmann::json e;
        e["kind"] = to_string(d.kind);
        if (d.station) e["station"] = d.station;
        if (d.kind == DefectKind::swap) e["region"] = abdmri::to_string(d.region);
        if (d.kind == DefectKind::dropout) e["location"] = d.location;
        if (d.kind == DefectKind::notch) e["width_voxels"] = d.notch_width_voxels;
        if (d.kind == DefectKind::series_shift) e["shift_dx_mm"] = d.shift_dx_mm;
        defects.push_back(e);
    }
    j["defects"] = defects;
    return j;
}

namespace detail {

inline void write_echo_series(const EchoSeries& series, const std::filesystem::path& dir,
                              const std::string& label, double phase_scale) {
    std::filesystem::create_directories(dir);
    const Geometry& g = series.volume.geom;
    Volume mag, phase;
    mag.geom = phase.geom = g;
    mag.kind = phase.kind = ElementKind::float32;
    for (std::size_t e = 0; e < series.echo_count(); ++e) {
        mag.names.push_back("e" + std::to_string(e));
        phase.names.push_back("e" + std::to_string(e));
        std::vector<float> m(g.nvox()), ph(g.nvox());
        for (std::size_t p = 0; p < m.size(); ++p) {
            const cfloat v = series.volume.cplx[e][p];
            m[p] = std::abs(v);
            ph[p] = static_cast<float>(std::atan2(double(v.imag()), double(v.real())) / phase_scale);
        }
        mag.real.push_back(std::move(m));
        phase.real.push_back(std::move(ph));
    }
    nifti::write_nifti(mag, dir / "mag.nii");
    nifti::write_nifti(phase, dir / "phase.nii");
    nifti::Sidecar meta;
    meta.series = label;
    meta.echo_times_ms = series.echo_times_ms;
    meta.flip_angle_deg = series.flip_angle_deg;
    meta.tr_ms = series.repetition_time_ms;
    nifti::write_sidecar(meta, dir / "meta.json");
}

inline void write_mask2(const Mask3& mask, const Geometry& g, const std::filesystem::path& path) {
    Volume v;
    v.geom = g;
    v.kind = ElementKind::int16;
    v.names = {"mask"};
    v.real.emplace_back(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) v.real[0][i] = mask[i] ? 1.0f : 0.0f;
    nifti::write_nifti(v, path);
}

}  // namespace detail

// Writes a complete subject directory under `dir`: raw/ inputs for every
// configured acquisition, external-segmentation masks, subject metadata, and
// truth.json. Returns the truth.
inline PhantomTruth write_subject(const std::filesystem::path& dir, const PhantomConfig& cfg,
                                  const QuantifyConfig& qcfg = {}) {
    namespace fs = std::filesystem;
    auto [subject, truth] = make_dixon_phantom(cfg);
    truth.body_center_y_mm = 0.0;

    const fs::path raw = dir / "raw";
    fs::create_directories(raw / "dixon");
    fs::create_directories(raw / "masks");

    for (std::size_t s = 0; s < subject.series.size(); ++s) {
        const DixonSeries& series = subject.series[s];
        const std::string stem = "series" + std::to_string(s + 1);
        for (int c = 0; c < 4; ++c)
            nifti::write_nifti(*series.channel(c),
                               raw / "dixon" / (stem + "_" + kDixonChannels[static_cast<std::size_t>(c)] + ".nii"));
        nifti::Sidecar meta;
        meta.series = series.label;
        meta.echo_times_ms = {2.39, 4.77};
        meta.flip_angle_deg = protocol::kDixonFlipDeg;
        meta.tr_ms = protocol::kDixonTrMs;
        nifti::write_sidecar(meta, raw / "dixon" / (stem + ".json"));
    }

    // assembled-grid geometry for the external liver segmentation
    std::vector<const Geometry*> geoms;
    std::vector<Geometry> owned;
    owned.reserve(6);
    for (const DixonSeries& s : subject.series) owned.push_back(s.geometry());
    for (const Geometry& g : owned) geoms.push_back(&g);
    const Geometry assembled_geom = assembled_target_geometry(geoms);
    detail::write_mask2(liver_mask_on(cfg.anatomy, assembled_geom), assembled_geom,
                        raw / "masks" / "liver_dixon.nii");

    truth.liver_slice_z_mm =
        truth.liver_top_z_mm - cfg.liver_slice_percent / 100.0 * (truth.liver_top_z_mm - truth.liver_bottom_z_mm);

    if (cfg.liver_gre) {
        auto [series, st] = make_organ_slice_phantom(cfg, truth.liver_slice_z_mm, "gre", false, 301, qcfg);
        detail::write_echo_series(series, raw / "liver_gre", "liver_gre", qcfg.phase_scale);
        detail::write_mask2(st.organ, st.geom, raw / "masks" / "liver_gre_region.nii");
    }
    if (cfg.liver_ideal) {
        auto [series, st] = make_organ_slice_phantom(cfg, truth.liver_slice_z_mm, "ideal", false, 302, qcfg);
        detail::write_echo_series(series, raw / "liver_ideal", "liver_ideal", qcfg.phase_scale);
        detail::write_mask2(st.organ, st.geom, raw / "masks" / "liver_ideal_region.nii");
    }
    if (cfg.pancreas_gre) {
        const PancreasSpec panc = pancreas_spec(cfg.anatomy);
        auto [series, st] = make_organ_slice_phantom(cfg, panc.center[2], "gre", true, 303, qcfg);
        detail::write_echo_series(series, raw / "pancreas_gre", "pancreas_gre", qcfg.phase_scale);
        detail::write_mask2(st.organ, st.geom, raw / "masks" / "pancreas_slice.nii");
        detail::write_mask2(st.organ, st.geom, raw / "masks" / "pancreas_gre_region.nii");
    }
    if (cfg.t1w) {
        const PancreasSpec panc = pancreas_spec(cfg.anatomy);
        const std::array<int, 3> dims = {160, 130, 80};
        const Vec3 sp = {2.375, 2.375, 3.2};
        const Geometry g = Geometry::axis_aligned(
            dims, sp,
            {-0.5 * (dims[0] - 1) * sp[0], -0.5 * (dims[1] - 1) * sp[1], panc.center[2] - 0.5 * (dims[2] - 1) * sp[2]});
        Volume norm;
        norm.geom = g;
        norm.kind = ElementKind::float32;
        norm.names = {"t1w"};
        norm.real.emplace_back(g.nvox(), 0.0f);
        Volume rawv = norm;
        const AnatomyFrame frame = AnatomyFrame::from(cfg.anatomy);
        detail::GainField gain;
        gain.active = true;
        gain.c = {0.12, -0.08, 0.10, 0.04};
        std::size_t p = 0;
        for (int k = 0; k < g.dims[2]; ++k)
            for (int j = 0; j < g.dims[1]; ++j)
                for (int i = 0; i < g.dims[0]; ++i, ++p) {
                    const Vec3 w = g.voxel_to_world({double(i), double(j), double(k)});
                    const TissueSample t = sample_tissue(cfg.anatomy, frame, w[0], w[1], w[2]);
                    if (!t.inside) continue;
                    const float v = static_cast<float>(cfg.anatomy.base_intensity *
                                                       (0.4 + 0.6 * t.fat_fraction) * t.water_gain);
                    norm.real[0][p] = v;
                    rawv.real[0][p] = static_cast<float>(v * gain.eval(w[0], w[1], w[2]));
                }
        fs::create_directories(raw / "t1w");
        nifti::write_nifti(rawv, raw / "t1w" / "t1w.nii");
        nifti::write_nifti(norm, raw / "t1w" / "t1w_norm.nii");
        nifti::Sidecar meta;
        meta.series = "pancreas_t1w";
        meta.echo_times_ms = {1.15};
        meta.flip_angle_deg = 10.0;
        meta.tr_ms = 3.11;
        nifti::write_sidecar(meta, raw / "t1w" / "t1w.json");
    }

    nlohmann::json subj_meta;
    subj_meta["sex"] = cfg.anatomy.sex;
    subj_meta["height_mm"] = cfg.anatomy.height_mm;
    std::ofstream meta_out(raw / "subject.json", std::ios::trunc);
    meta_out << subj_meta.dump(2) << "\n";

    std::ofstream truth_out(dir / "truth.json", std::ios::trunc);
    truth_out << truth_json(truth).dump(2) << "\n";
    return truth;
}

// ---------------------------------------------------------------------------
// Atlas bank.
// ---------------------------------------------------------------------------

// Balanced sexes, spread heights, canonical joints with Gaussian jitter, and
// low-resolution body masks rendered from the same anatomy.
inline std::vector<Atlas> make_atlas_bank(int n, std::uint64_t seed, double jitter_mm = 3.0) {
    require(n >= 2, ErrorCode::invalid_config, "bank needs at least two atlases");
    std::vector<Atlas> bank;
    Rng rng(Rng::derive(seed, 31));
    const std::array<int, 3> dims = {56, 44, 93};
    const Vec3 spacing = {8.928, 8.928, 12.0};
    for (int a = 0; a < n; ++a) {
        Atlas atlas;
        char id[32];
        std::snprintf(id, sizeof(id), "atlas_%03d", a);
        atlas.id = id;
        atlas.sex = a % 2 == 0 ? "F" : "M";
        atlas.height_mm = 1550.0 + 400.0 * rng.uniform();

        AnatomyConfig anat;
        anat.sex = atlas.sex;
        anat.height_mm = atlas.height_mm;
        const std::array<Vec3, 6> joints = joint_positions(anat);
        for (int q = 0; q < 6; ++q)
            atlas.landmarks[static_cast<std::size_t>(q)] = {joints[static_cast<std::size_t>(q)][0] + jitter_mm * rng.gaussian(),
                                                            joints[static_cast<std::size_t>(q)][1] + jitter_mm * rng.gaussian(),
                                                            joints[static_cast<std::size_t>(q)][2] + jitter_mm * rng.gaussian()};

        atlas.mask_geom = Geometry::axis_aligned(
            dims, spacing,
            {-0.5 * (dims[0] - 1) * spacing[0], -0.5 * (dims[1] - 1) * spacing[1], -(dims[2] - 1) * spacing[2]});
        atlas.mask = body_mask_on(anat, atlas.mask_geom);
        bank.push_back(std::move(atlas));
    }
    return bank;
}

}  // namespace abdmri::phantom
