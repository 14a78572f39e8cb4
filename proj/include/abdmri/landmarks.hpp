#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "abdmri/anomaly.hpp"
#include "abdmri/config.hpp"
#include "abdmri/nifti.hpp"
#include "abdmri/volume.hpp"

namespace abdmri {

enum class Joint : int {
    shoulder_right = 0,
    shoulder_left = 1,
    hip_right = 2,
    hip_left = 3,
    knee_right = 4,
    knee_left = 5,
};

inline constexpr std::array<const char*, 6> kJointNames = {
    "shoulder_right", "shoulder_left", "hip_right", "hip_left", "knee_right", "knee_left"};

enum class LandmarkStatus { present, missing };

struct Landmark {
    Joint joint = Joint::shoulder_right;
    Vec3 position_mm{0, 0, 0};
    LandmarkStatus status = LandmarkStatus::missing;
    double support = 0.0;  // fraction of atlas votes inside the field of view
};

struct Atlas {
    std::string id;
    std::string sex;  // "F" or "M"
    double height_mm = 0.0;
    std::array<Vec3, 6> landmarks{};
    Geometry mask_geom;
    Mask3 mask;
};

// ---------------------------------------------------------------------------
// Atlas selection: same sex, nearest height.
// ---------------------------------------------------------------------------

inline std::vector<const Atlas*> select_atlases(const std::string& sex, double height_mm,
                                                const std::vector<Atlas>& bank, int k) {
    require(!bank.empty(), ErrorCode::empty_bank, "atlas bank is empty");
    std::vector<const Atlas*> matched;
    for (const Atlas& a : bank)
        if (a.sex == sex) matched.push_back(&a);
    require(!matched.empty(), ErrorCode::empty_bank, "no atlases with sex '" + sex + "'");
    std::sort(matched.begin(), matched.end(), [&](const Atlas* a, const Atlas* b) {
        const double da = std::abs(a->height_mm - height_mm);
        const double db = std::abs(b->height_mm - height_mm);
        return da != db ? da < db : a->id < b->id;
    });
    if (static_cast<int>(matched.size()) > k) matched.resize(static_cast<std::size_t>(k));
    return matched;
}

// ---------------------------------------------------------------------------
// Similarity registration (per-axis scale + translation).
// ---------------------------------------------------------------------------

struct SimilarityTransform {
    Vec3 scale{1, 1, 1};
    Vec3 offset{0, 0, 0};

    [[nodiscard]] Vec3 apply(const Vec3& x) const {
        return {scale[0] * x[0] + offset[0], scale[1] * x[1] + offset[1], scale[2] * x[2] + offset[2]};
    }

    [[nodiscard]] Vec3 apply_inverse(const Vec3& y) const {
        return {(y[0] - offset[0]) / scale[0], (y[1] - offset[1]) / scale[1], (y[2] - offset[2]) / scale[2]};
    }
};

namespace detail {

struct MaskCloud {
    std::vector<Vec3> points;  // world coordinates of ON voxels (strided)
    Vec3 centroid{0, 0, 0};
    Vec3 lo{0, 0, 0}, hi{0, 0, 0};
    std::size_t on_count = 0;
};

inline MaskCloud mask_cloud(const Geometry& geom, const Mask3& mask, std::size_t target_points) {
    MaskCloud c;
    std::size_t on = 0;
    for (const auto m : mask) on += m;
    require(on > 0, ErrorCode::empty_mask, "registration mask is empty");
    c.on_count = on;
    const std::size_t stride = std::max<std::size_t>(1, on / target_points);
    bool first = true;
    std::size_t seen = 0, p = 0;
    double sx = 0, sy = 0, sz = 0;
    for (int k = 0; k < geom.dims[2]; ++k)
        for (int j = 0; j < geom.dims[1]; ++j)
            for (int i = 0; i < geom.dims[0]; ++i, ++p) {
                if (!mask[p]) continue;
                const Vec3 w = geom.voxel_to_world({double(i), double(j), double(k)});
                sx += w[0];
                sy += w[1];
                sz += w[2];
                if (first) {
                    c.lo = c.hi = w;
                    first = false;
                } else
                    for (int a = 0; a < 3; ++a) {
                        c.lo[a] = std::min(c.lo[a], w[a]);
                        c.hi[a] = std::max(c.hi[a], w[a]);
                    }
                if (seen++ % stride == 0) c.points.push_back(w);
            }
    c.centroid = {sx / double(on), sy / double(on), sz / double(on)};
    return c;
}

}  // namespace detail

// Closed-form x/y alignment from mask centroids and extents, then a
// coarse-to-fine grid search over z scale and z translation maximizing the
// symmetric mask overlap. Deterministic.
inline SimilarityTransform register_atlas(const Geometry& subject_geom, const Mask3& subject_mask,
                                          const Geometry& atlas_geom, const Mask3& atlas_mask) {
    const detail::MaskCloud subj = detail::mask_cloud(subject_geom, subject_mask, 9000);
    const detail::MaskCloud atl = detail::mask_cloud(atlas_geom, atlas_mask, 9000);

    SimilarityTransform t;
    for (int a = 0; a < 2; ++a) {
        const double es = subj.hi[a] - subj.lo[a];
        const double ea = atl.hi[a] - atl.lo[a];
        t.scale[a] = (es > 1e-9 && ea > 1e-9) ? es / ea : 1.0;
        t.offset[a] = subj.centroid[a] - t.scale[a] * atl.centroid[a];
    }

    const Affine subj_inv = subject_geom.affine.inverse();
    const Affine atl_inv = atlas_geom.affine.inverse();
    // trilinear membership keeps the overlap score smooth in the transform,
    // so the optimum is not quantized to mask voxel plateaus
    const auto soft_lookup = [](const Geometry& g, const Mask3& mask, const Affine& inv, const Vec3& w) {
        const Vec3 q = inv.apply(w);
        const int i0 = static_cast<int>(std::floor(q[0]));
        const int j0 = static_cast<int>(std::floor(q[1]));
        const int k0 = static_cast<int>(std::floor(q[2]));
        double acc = 0.0;
        for (int dk = 0; dk < 2; ++dk)
            for (int dj = 0; dj < 2; ++dj)
                for (int di = 0; di < 2; ++di) {
                    const int i = i0 + di, j = j0 + dj, k = k0 + dk;
                    if (!g.contains(i, j, k) || !mask[g.index(i, j, k)]) continue;
                    acc += (di ? q[0] - i0 : 1.0 - (q[0] - i0)) * (dj ? q[1] - j0 : 1.0 - (q[1] - j0)) *
                           (dk ? q[2] - k0 : 1.0 - (q[2] - k0));
                }
        return acc;
    };

    const auto score = [&](double sz, double tz) {
        SimilarityTransform cand = t;
        cand.scale[2] = sz;
        cand.offset[2] = tz;
        double hits = 0.0;
        for (const Vec3& p : atl.points) hits += soft_lookup(subject_geom, subject_mask, subj_inv, cand.apply(p));
        for (const Vec3& p : subj.points) hits += soft_lookup(atlas_geom, atlas_mask, atl_inv, cand.apply_inverse(p));
        return hits / double(atl.points.size() + subj.points.size());
    };

    double best_sz = 1.0;
    double best_tz = subj.centroid[2] - atl.centroid[2];
    double best = -1.0;
    // level 0: wide sweep; deeper levels shrink around the current optimum
    const double scale_steps[] = {0.04, 0.02, 0.01, 0.005};
    const double shift_steps[] = {12.0, 6.0, 3.0, 1.0};
    for (int level = 0; level < 4; ++level) {
        const int span = level == 0 ? 5 : 2;
        const double s0 = best_sz, t0 = best_tz;
        for (int a = -span; a <= span; ++a)
            for (int b = -span; b <= span; ++b) {
                const double sz = s0 + scale_steps[level] * a;
                if (sz < 0.5 || sz > 2.0) continue;
                const double tz = t0 + shift_steps[level] * b + (level == 0 ? (1.0 - sz) * atl.centroid[2] : 0.0);
                const double sc = score(sz, tz);
                if (sc > best + 1e-12) {
                    best = sc;
                    best_sz = sz;
                    best_tz = tz;
                }
            }
    }
    t.scale[2] = best_sz;
    t.offset[2] = best_tz;
    return t;
}

// ---------------------------------------------------------------------------
// Voting and refinement.
// ---------------------------------------------------------------------------

struct JointVote {
    Vec3 centroid{0, 0, 0};
    double support = 0.0;
    bool present = false;
    std::vector<Vec3> in_fov_votes;
};

[[nodiscard]] inline bool in_fov(const Geometry& g, const Vec3& world) {
    const Vec3 q = g.world_to_voxel(world);
    for (int a = 0; a < 3; ++a)
        if (q[a] < -0.5 || q[a] >= double(g.dims[a]) - 0.5) return false;
    return true;
}

// The missing rule: a joint is missing exactly when support < threshold.
inline JointVote vote_from_points(const std::vector<Vec3>& mapped, const Geometry& fov,
                                  double support_threshold = 0.5) {
    JointVote v;
    if (mapped.empty()) return v;
    for (const Vec3& p : mapped)
        if (in_fov(fov, p)) v.in_fov_votes.push_back(p);
    v.support = double(v.in_fov_votes.size()) / double(mapped.size());
    v.present = v.support >= support_threshold;
    if (!v.in_fov_votes.empty()) {
        for (const Vec3& p : v.in_fov_votes) v.centroid = v.centroid + p;
        v.centroid = (1.0 / double(v.in_fov_votes.size())) * v.centroid;
    }
    return v;
}

inline std::array<JointVote, 6> propagate_and_vote(const Geometry& subject_fov,
                                                   const std::vector<const Atlas*>& atlases,
                                                   const std::vector<SimilarityTransform>& transforms,
                                                   double support_threshold = 0.5) {
    require(!atlases.empty() && atlases.size() == transforms.size(), ErrorCode::empty_bank,
            "need registered atlases to vote");
    std::array<JointVote, 6> votes;
    for (int j = 0; j < 6; ++j) {
        std::vector<Vec3> mapped;
        mapped.reserve(atlases.size());
        for (std::size_t a = 0; a < atlases.size(); ++a)
            mapped.push_back(transforms[a].apply(atlases[a]->landmarks[static_cast<std::size_t>(j)]));
        votes[static_cast<std::size_t>(j)] = vote_from_points(mapped, subject_fov, support_threshold);
    }
    return votes;
}

// Crop-based refinement: centroid of the brightest connected blob in the
// water channel after top-fraction intensity thresholding inside a cube crop.
// Pluggable: a learned coordinate regressor with the same signature can
// replace it. Throws crop_out_of_bounds when the crop is clipped by more than
// half; callers keep the coarse estimate in that case.
inline Vec3 refine_landmark(const Volume& water, const Vec3& coarse_world, const LandmarkConfig& cfg = {}) {
    const Geometry& g = water.geom;
    const Vec3 q = g.world_to_voxel(coarse_world);
    const int half = cfg.crop_size / 2;
    const int ci = static_cast<int>(std::lround(q[0]));
    const int cj = static_cast<int>(std::lround(q[1]));
    const int ck = static_cast<int>(std::lround(q[2]));
    require(g.contains(std::clamp(ci, 0, g.dims[0] - 1), std::clamp(cj, 0, g.dims[1] - 1),
                       std::clamp(ck, 0, g.dims[2] - 1)),
            ErrorCode::crop_out_of_bounds, "coarse position outside the volume");

    const int lo[3] = {std::max(0, ci - half), std::max(0, cj - half), std::max(0, ck - half)};
    const int hi[3] = {std::min(g.dims[0], ci + half), std::min(g.dims[1], cj + half), std::min(g.dims[2], ck + half)};
    const std::size_t in_bounds = static_cast<std::size_t>(std::max(0, hi[0] - lo[0])) *
                                  static_cast<std::size_t>(std::max(0, hi[1] - lo[1])) *
                                  static_cast<std::size_t>(std::max(0, hi[2] - lo[2]));
    const std::size_t full = static_cast<std::size_t>(cfg.crop_size) * cfg.crop_size * cfg.crop_size;
    require(double(in_bounds) >= cfg.min_in_bounds_fraction * double(full), ErrorCode::crop_out_of_bounds,
            "crop clipped by more than half");

    const std::array<int, 3> cdims = {hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]};
    const auto& v = water.real[0];
    std::vector<float> crop(in_bounds);
    std::size_t p = 0;
    for (int k = lo[2]; k < hi[2]; ++k)
        for (int j = lo[1]; j < hi[1]; ++j)
            for (int i = lo[0]; i < hi[0]; ++i, ++p) crop[p] = v[g.index(i, j, k)];

    const float thr = percentile(crop, 100.0 * (1.0 - cfg.refine_top_fraction));
    Mask3 blob(crop.size(), 0);
    for (std::size_t i = 0; i < crop.size(); ++i) blob[i] = crop[i] >= thr && crop[i] > 0.0f ? 1 : 0;
    const Labels3 lab = connected_components_3d(blob, cdims);
    if (lab.count.empty()) return coarse_world;

    // brightest blob = maximum total intensity
    std::vector<double> total(lab.count.size(), 0.0);
    for (std::size_t i = 0; i < crop.size(); ++i)
        if (lab.label[i] > 0) total[static_cast<std::size_t>(lab.label[i] - 1)] += crop[i];
    const std::int32_t best =
        1 + static_cast<std::int32_t>(std::max_element(total.begin(), total.end()) - total.begin());

    double si = 0, sj = 0, sk = 0;
    std::size_t n = 0;
    p = 0;
    for (int k = 0; k < cdims[2]; ++k)
        for (int j = 0; j < cdims[1]; ++j)
            for (int i = 0; i < cdims[0]; ++i, ++p)
                if (lab.label[p] == best) {
                    si += i + lo[0];
                    sj += j + lo[1];
                    sk += k + lo[2];
                    ++n;
                }
    return g.voxel_to_world({si / double(n), sj / double(n), sk / double(n)});
}

// ---------------------------------------------------------------------------
// Full chain.
// ---------------------------------------------------------------------------

struct JointDetection {
    std::array<Landmark, 6> landmarks;
    int present_count = 0;
};

// Block-majority downsampling of the subject mask; atlas masks are already
// low resolution, and registering at matched scale costs a fraction of the
// full grid.
inline std::pair<Geometry, Mask3> downsample_mask(const Geometry& g, const Mask3& mask, int factor) {
    Geometry low;
    low.dims = {(g.dims[0] + factor - 1) / factor, (g.dims[1] + factor - 1) / factor,
                (g.dims[2] + factor - 1) / factor};
    low.spacing = {g.spacing[0] * factor, g.spacing[1] * factor, g.spacing[2] * factor};
    low.affine = g.affine;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) low.affine.at(r, c) *= factor;
        low.affine.at(r, 3) = g.affine.at(r, 3) + 0.5 * (factor - 1) * (g.affine.at(r, 0) + g.affine.at(r, 1) +
                                                                        g.affine.at(r, 2));
    }
    Mask3 out(low.nvox(), 0);
    std::size_t p = 0;
    for (int k = 0; k < low.dims[2]; ++k)
        for (int j = 0; j < low.dims[1]; ++j)
            for (int i = 0; i < low.dims[0]; ++i, ++p) {
                int on = 0, total = 0;
                for (int dk = 0; dk < factor; ++dk)
                    for (int dj = 0; dj < factor; ++dj)
                        for (int di = 0; di < factor; ++di) {
                            const int ii = i * factor + di, jj = j * factor + dj, kk = k * factor + dk;
                            if (!g.contains(ii, jj, kk)) continue;
                            ++total;
                            on += mask[g.index(ii, jj, kk)];
                        }
                out[p] = (total > 0 && 2 * on >= total) ? 1 : 0;
            }
    return {low, out};
}

inline JointDetection detect_joints(const AssembledVolume& assembled, const BodyMask& body,
                                    const std::string& sex, double height_mm, const std::vector<Atlas>& bank,
                                    const LandmarkConfig& cfg = {}) {
    const std::vector<const Atlas*> atlases = select_atlases(sex, height_mm, bank, cfg.atlas_count);
    const auto [low_geom, low_mask] = downsample_mask(assembled.channels.geom, body.mask, 4);
    std::vector<SimilarityTransform> transforms;
    transforms.reserve(atlases.size());
    for (const Atlas* a : atlases)
        transforms.push_back(register_atlas(low_geom, low_mask, a->mask_geom, a->mask));

    const std::array<JointVote, 6> votes =
        propagate_and_vote(assembled.channels.geom, atlases, transforms, cfg.support_threshold);

    const Volume water = extract_channel(assembled.channels, "water");
    JointDetection out;
    for (int j = 0; j < 6; ++j) {
        Landmark& lm = out.landmarks[static_cast<std::size_t>(j)];
        lm.joint = static_cast<Joint>(j);
        lm.support = votes[static_cast<std::size_t>(j)].support;
        if (!votes[static_cast<std::size_t>(j)].present) {
            lm.status = LandmarkStatus::missing;
            continue;
        }
        lm.status = LandmarkStatus::present;
        ++out.present_count;
        lm.position_mm = votes[static_cast<std::size_t>(j)].centroid;
        try {
            lm.position_mm = refine_landmark(water, lm.position_mm, cfg);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::crop_out_of_bounds) throw;
            // clipped crop: keep the coarse vote centroid
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Bank I/O: per atlas a NIfTI mask plus a JSON landmark file.
// ---------------------------------------------------------------------------

inline void save_atlas_bank(const std::vector<Atlas>& bank, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (const Atlas& a : bank) {
        Volume m;
        m.geom = a.mask_geom;
        m.kind = ElementKind::int16;
        m.names = {"mask"};
        m.real.emplace_back(a.mask.size());
        for (std::size_t i = 0; i < a.mask.size(); ++i) m.real[0][i] = a.mask[i] ? 1.0f : 0.0f;
        nifti::write_nifti(m, dir / (a.id + "_mask.nii"));
        nlohmann::json j;
        j["id"] = a.id;
        j["sex"] = a.sex;
        j["height_mm"] = a.height_mm;
        nlohmann::json lms;
        for (int q = 0; q < 6; ++q)
            lms[kJointNames[static_cast<std::size_t>(q)]] = {a.landmarks[static_cast<std::size_t>(q)][0],
                                                             a.landmarks[static_cast<std::size_t>(q)][1],
                                                             a.landmarks[static_cast<std::size_t>(q)][2]};
        j["landmarks"] = lms;
        std::ofstream out(dir / (a.id + ".json"), std::ios::trunc);
        require(out.good(), ErrorCode::io_failure, "cannot write atlas json");
        out << j.dump(2) << "\n";
    }
}

inline std::vector<Atlas> load_atlas_bank(const std::filesystem::path& dir) {
    require(std::filesystem::is_directory(dir), ErrorCode::empty_bank, "atlas bank dir missing: " + dir.string());
    std::vector<std::filesystem::path> jsons;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.path().extension() == ".json") jsons.push_back(entry.path());
    std::sort(jsons.begin(), jsons.end());
    std::vector<Atlas> bank;
    for (const auto& path : jsons) {
        std::ifstream in(path);
        nlohmann::json j;
        in >> j;
        Atlas a;
        a.id = j.at("id").get<std::string>();
        a.sex = j.at("sex").get<std::string>();
        a.height_mm = j.at("height_mm").get<double>();
        for (int q = 0; q < 6; ++q) {
            const auto& arr = j.at("landmarks").at(kJointNames[static_cast<std::size_t>(q)]);
            a.landmarks[static_cast<std::size_t>(q)] = {arr[0].get<double>(), arr[1].get<double>(),
                                                        arr[2].get<double>()};
        }
        const Volume m = nifti::read_nifti(dir / (a.id + "_mask.nii"));
        a.mask_geom = m.geom;
        a.mask.assign(m.nvox(), 0);
        for (std::size_t i = 0; i < a.mask.size(); ++i) a.mask[i] = m.real[0][i] > 0.5f ? 1 : 0;
        bank.push_back(std::move(a));
    }
    require(!bank.empty(), ErrorCode::empty_bank, "no atlases found in " + dir.string());
    return bank;
}

inline nlohmann::json joints_json(const JointDetection& d) {
    nlohmann::json arr = nlohmann::json::array();
    for (const Landmark& lm : d.landmarks) {
        nlohmann::json e;
        e["joint"] = kJointNames[static_cast<std::size_t>(static_cast<int>(lm.joint))];
        e["status"] = lm.status == LandmarkStatus::present ? "present" : "missing";
        e["support"] = lm.support;
        if (lm.status == LandmarkStatus::present)
            e["position_mm"] = {lm.position_mm[0], lm.position_mm[1], lm.position_mm[2]};
        arr.push_back(e);
    }
    return arr;
}

}  // namespace abdmri
