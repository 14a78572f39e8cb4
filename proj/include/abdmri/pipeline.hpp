#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "abdmri/anomaly.hpp"
#include "abdmri/assembly.hpp"
#include "abdmri/bias.hpp"
#include "abdmri/config.hpp"
#include "abdmri/landmarks.hpp"
#include "abdmri/nifti.hpp"
#include "abdmri/placement.hpp"
#include "abdmri/png.hpp"
#include "abdmri/quantify.hpp"
#include "abdmri/swap.hpp"

namespace abdmri::pipeline {

namespace fs = std::filesystem;

// Fixed names inside a subject tree. Tests assert this contract.
namespace manifest {
inline constexpr int kVersion = 1;
inline constexpr std::array<const char*, 6> kDirs = {"analysis", "landmarks", "nifti",
                                                     "plots",    "summary",   "tmp"};
inline constexpr std::array<const char*, 4> kAssembledFiles = {"in.nii", "opp.nii", "fat.nii", "water.nii"};
inline constexpr const char* kBodyMask = "body_mask.nii";
inline constexpr const char* kJoints = "joints.json";
inline constexpr const char* kSwaps = "swaps.json";
inline constexpr const char* kAnomaly = "anomaly.json";
inline constexpr const char* kPlacement = "placement.json";
inline constexpr const char* kQuant = "quant.json";
inline constexpr const char* kProvenance = "provenance.json";
inline constexpr const char* kSubjectSummary = "subject.json";
inline constexpr const char* kAnomalyOverlay = "anomaly_overlay.png";
inline constexpr const char* kJointsOverlay = "joints_overlay.png";
}  // namespace manifest

inline constexpr std::array<const char*, 5> kAcquisitions = {"dixon", "pancreas_t1w", "liver_gre",
                                                             "liver_ideal", "pancreas_gre"};

struct StageStatus {
    std::string state = "skipped";  // ok | failed | skipped
    std::string reason;             // failure taxonomy or skip cause
};

struct SubjectRecord {
    std::string id;
    std::map<std::string, bool> acquisitions;
    std::map<std::string, StageStatus> stages;
    int swap_count = 0;
    std::vector<std::pair<int, std::string>> swaps;  // station, region
    std::vector<std::string> anomaly_flags;
    std::map<std::string, std::string> joint_status;
    std::optional<double> liver_percent;
    std::optional<std::size_t> pancreas_voxels;
};

// The paper-style failure taxonomy used in cohort censuses.
[[nodiscard]] inline std::string failure_reason(const Error& e) {
    switch (e.code()) {
        case ErrorCode::missing_series:           return "missing_series";
        case ErrorCode::missing_channel:          return "missing_channel";
        case ErrorCode::non_standard_acquisition: return "non_standard";
        case ErrorCode::malformed_header:
        case ErrorCode::unsupported_datatype:
        case ErrorCode::truncated_data:
        case ErrorCode::io_failure:
        case ErrorCode::invalid_volume:
        case ErrorCode::corrupt_echo:             return "corrupt";
        default:                                  return "other";
    }
}

namespace detail {

inline void write_json(const nlohmann::json& j, const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), ErrorCode::io_failure, "cannot create " + path.string());
    out << j.dump(2) << "\n";
}

inline DixonSubject load_dixon(const fs::path& dir) {
    std::vector<fs::path> sidecars;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.path().extension() == ".json") sidecars.push_back(entry.path());
    std::sort(sidecars.begin(), sidecars.end());
    require(sidecars.size() <= 6, ErrorCode::non_standard_acquisition,
            "more than six series present (" + std::to_string(sidecars.size()) + ")");
    require(sidecars.size() == 6, ErrorCode::missing_series,
            "expected 6 series, found " + std::to_string(sidecars.size()));

    DixonSubject subject;
    for (const auto& sc : sidecars) {
        const nifti::Sidecar meta = nifti::read_sidecar(sc);
        DixonSeries series;
        series.label = meta.series;
        const std::string stem = sc.stem().string();
        for (int c = 0; c < 4; ++c) {
            const fs::path f = dir / (stem + "_" + kDixonChannels[static_cast<std::size_t>(c)] + ".nii");
            require(fs::exists(f), ErrorCode::missing_channel,
                    "series '" + meta.series + "' lacks channel file " + f.filename().string());
            series.channel(c) = nifti::read_nifti(f);
        }
        subject.series.push_back(std::move(series));
    }

    const fs::path meta_path = dir.parent_path() / "subject.json";
    if (fs::exists(meta_path)) {
        std::ifstream in(meta_path);
        nlohmann::json j;
        in >> j;
        subject.sex = j.value("sex", "");
        subject.height_mm = j.value("height_mm", 0.0);
    }
    return subject;
}

inline EchoSeries load_multiecho(const fs::path& dir, double phase_scale) {
    const Volume mag = nifti::read_nifti(dir / "mag.nii");
    const Volume phase = nifti::read_nifti(dir / "phase.nii");
    const nifti::Sidecar meta = nifti::read_sidecar(dir / "meta.json");
    require(mag.geom.same_grid(phase.geom), ErrorCode::geometry_mismatch, "mag/phase grids differ");
    require(mag.nchannels() == phase.nchannels(), ErrorCode::geometry_mismatch, "mag/phase echo counts differ");
    require(mag.nchannels() == meta.echo_times_ms.size(), ErrorCode::corrupt_echo,
            "echo count disagrees with sidecar");

    EchoSeries series;
    series.volume = Volume::complex(mag.geom, mag.nchannels());
    series.echo_times_ms = meta.echo_times_ms;
    series.flip_angle_deg = meta.flip_angle_deg;
    series.repetition_time_ms = meta.tr_ms;
    for (std::size_t e = 0; e < mag.nchannels(); ++e)
        for (std::size_t p = 0; p < mag.nvox(); ++p) {
            const double m = mag.real[e][p];
            const double ph = phase.real[e][p] * phase_scale;
            series.volume.cplx[e][p] = cfloat{static_cast<float>(m * std::cos(ph)),
                                              static_cast<float>(m * std::sin(ph))};
        }
    return series;
}

inline Volume mask_to_volume(const Mask3& mask, const Geometry& g) {
    Volume v;
    v.geom = g;
    v.kind = ElementKind::int16;
    v.names = {"mask"};
    v.real.emplace_back(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) v.real[0][i] = mask[i] ? 1.0f : 0.0f;
    return v;
}

inline Volume map_to_volume(const std::vector<float>& map, const Geometry& g, const char* name) {
    Volume v;
    v.geom = g;
    v.kind = ElementKind::float32;
    v.names = {name};
    v.real.push_back(map);
    return v;
}

inline void render_anomaly_overlay(const AssembledVolume& assembled, const BodyMask& body,
                                   const AnomalyConfig& cfg, const fs::path& path) {
    const Geometry& g = assembled.channels.geom;
    std::size_t n = 0;
    double cy = 0.0;
    std::size_t p = 0;
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i, ++p)
                if (body.mask[p]) {
                    cy += j;
                    ++n;
                }
    const int cj = n ? std::clamp(static_cast<int>(std::lround(cy / double(n))), 0, g.dims[1] - 1) : g.dims[1] / 2;

    Image2 slice(g.dims[0], g.dims[2]);
    Mask2 mslice(g.dims[0], g.dims[2]);
    for (int k = 0; k < g.dims[2]; ++k)
        for (int i = 0; i < g.dims[0]; ++i) {
            slice.at(i, k) = body.mask[g.index(i, cj, k)] ? 1.0f : 0.0f;
            mslice.at(i, k) = body.mask[g.index(i, cj, k)];
        }
    const Mask2 edges = canny_edges(slice, cfg.canny_low_frac, cfg.canny_high_frac, cfg.canny_sigma);
    RgbImage img = grayscale_base(slice);
    for (int y = 0; y < edges.ny; ++y)
        for (int x = 0; x < edges.nx; ++x)
            if (edges.at(x, y)) img.set(x, edges.ny - 1 - y, 255, 40, 40);
    write_png(img, path);
}

inline void render_joints_overlay(const AssembledVolume& assembled, const BodyMask& body,
                                  const JointDetection& joints, const fs::path& path) {
    const Geometry& g = assembled.channels.geom;
    std::size_t n = 0;
    double cy = 0.0;
    std::size_t p = 0;
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i, ++p)
                if (body.mask[p]) {
                    cy += j;
                    ++n;
                }
    const int cj = n ? std::clamp(static_cast<int>(std::lround(cy / double(n))), 0, g.dims[1] - 1) : g.dims[1] / 2;
    const Image2 slice = coronal_slice(assembled.channel("in"), g, cj);
    RgbImage img = grayscale_base(slice);

    const std::array<std::array<std::uint8_t, 3>, 6> colors = {{
        {255, 0, 0},     // right shoulder
        {0, 255, 0},     // left shoulder
        {0, 0, 255},     // right hip
        {255, 255, 0},   // left hip
        {0, 255, 255},   // right knee
        {255, 0, 255},   // left knee
    }};
    for (int q = 0; q < 6; ++q) {
        const Landmark& lm = joints.landmarks[static_cast<std::size_t>(q)];
        if (lm.status != LandmarkStatus::present) continue;
        const Vec3 v = g.world_to_voxel(lm.position_mm);
        const int x = static_cast<int>(std::lround(v[0]));
        const int y = slice.ny - 1 - static_cast<int>(std::lround(v[2]));
        const auto& c = colors[static_cast<std::size_t>(q)];
        for (int d = -4; d <= 4; ++d) {
            img.set(x + d, y, c[0], c[1], c[2]);
            img.set(x, y + d, c[0], c[1], c[2]);
        }
    }
    write_png(img, path);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Single-subject run.
// ---------------------------------------------------------------------------

// Executes every applicable stage in dependency order, isolating failures per
// acquisition. Creates the fixed directory tree; tmp/ is removed on success.
inline SubjectRecord run_subject(const fs::path& subject_dir, const PipelineConfig& config = {}) {
    const fs::path raw = subject_dir / "raw";
    SubjectRecord record;
    record.id = subject_dir.filename().string();

    for (const char* acq : kAcquisitions) record.acquisitions[acq] = false;
    record.acquisitions["dixon"] = fs::is_directory(raw / "dixon");
    record.acquisitions["pancreas_t1w"] = fs::is_directory(raw / "t1w");
    record.acquisitions["liver_gre"] = fs::is_directory(raw / "liver_gre");
    record.acquisitions["liver_ideal"] = fs::is_directory(raw / "liver_ideal");
    record.acquisitions["pancreas_gre"] = fs::is_directory(raw / "pancreas_gre");

    bool any = false;
    for (const auto& [name, present] : record.acquisitions) any = any || present;
    require(any, ErrorCode::no_recognized_input, "no recognized acquisition under " + raw.string());

    for (const char* d : manifest::kDirs) fs::create_directories(subject_dir / d);

    std::optional<AssembledVolume> assembled;
    std::optional<BodyMask> body;

    // --- Dixon chain: assemble -> swap -> anomaly -> landmarks ---
    if (record.acquisitions["dixon"]) {
        StageStatus& assemble_stage = record.stages["assemble"];
        DixonSubject subject;
        try {
            subject = detail::load_dixon(raw / "dixon");
            assembled = assemble(subject, config.assembly);
            assemble_stage.state = "ok";
        } catch (const Error& e) {
            assemble_stage = {"failed", failure_reason(e)};
        }

        if (assemble_stage.state == "ok") {
            StageStatus& swap_stage = record.stages["swap"];
            try {
                SwapReport report = run_swap_checks(subject, config.swap);
                bool any_swap = false;
                for (const SwapCheck& c : report.checks) any_swap = any_swap || c.label == SwapLabel::swapped;
                if (any_swap) {
                    subject = correct_swaps(subject, report);
                    assembled = assemble(subject, config.assembly);
                }
                for (const SwapCheck& c : report.checks)
                    if (c.label == SwapLabel::swapped) {
                        ++record.swap_count;
                        record.swaps.push_back({c.series, to_string(c.region)});
                    }
                detail::write_json(swap_report_json(report), subject_dir / "summary" / manifest::kSwaps);
                swap_stage.state = "ok";
            } catch (const Error& e) {
                swap_stage = {"failed", failure_reason(e)};
            }

            for (std::size_t c = 0; c < 4; ++c)
                nifti::write_nifti(extract_channel(assembled->channels, kDixonChannels[c]),
                                   subject_dir / "nifti" / manifest::kAssembledFiles[c]);
            detail::write_json(provenance_json(*assembled), subject_dir / "summary" / manifest::kProvenance);

            StageStatus& anomaly_stage = record.stages["anomaly"];
            try {
                body = body_mask(extract_channel(assembled->channels, "in"), config.anomaly);
                nifti::write_nifti(detail::mask_to_volume(body->mask, assembled->channels.geom),
                                   subject_dir / "analysis" / manifest::kBodyMask);
                const AnomalyReport report = detect_anomalies(*assembled, *body, config.anomaly);
                for (const auto f : report.flags) record.anomaly_flags.push_back(to_string(f));
                detail::write_json(anomaly_report_json(report), subject_dir / "summary" / manifest::kAnomaly);
                detail::render_anomaly_overlay(*assembled, *body, config.anomaly,
                                               subject_dir / "plots" / manifest::kAnomalyOverlay);
                anomaly_stage.state = "ok";
            } catch (const Error& e) {
                anomaly_stage = {"failed", failure_reason(e)};
            }

            StageStatus& lm_stage = record.stages["landmarks"];
            if (config.atlas_bank_dir.empty()) {
                lm_stage = {"skipped", "no atlas bank configured"};
            } else if (!body) {
                lm_stage = {"skipped", "no body mask"};
            } else if (subject.sex.empty() || subject.height_mm <= 0.0) {
                lm_stage = {"skipped", "subject sex/height unavailable"};
            } else {
                try {
                    const std::vector<Atlas> bank = load_atlas_bank(config.atlas_bank_dir);
                    const JointDetection joints =
                        detect_joints(*assembled, *body, subject.sex, subject.height_mm, bank, config.landmarks);
                    detail::write_json(joints_json(joints), subject_dir / "landmarks" / manifest::kJoints);
                    detail::render_joints_overlay(*assembled, *body, joints,
                                                  subject_dir / "plots" / manifest::kJointsOverlay);
                    for (const Landmark& lm : joints.landmarks)
                        record.joint_status[kJointNames[static_cast<std::size_t>(static_cast<int>(lm.joint))]] =
                            lm.status == LandmarkStatus::present ? "present" : "missing";
                    lm_stage.state = "ok";
                } catch (const Error& e) {
                    lm_stage = {"failed", failure_reason(e)};
                }
            }

            // kept for troubleshooting; removed with tmp/ on success
            try {
                const std::vector<int> order = abdmri::detail::stations_by_z(subject);
                for (int s = 0; s < 6; ++s) {
                    const DixonSeries& series = subject.series[static_cast<std::size_t>(order[static_cast<std::size_t>(s)])];
                    const SwapSlicePair pair = prepare_slice(*series.fat, *series.water, config.swap);
                    Volume v;
                    v.geom = Geometry::axis_aligned({pair.fat.nx, pair.fat.ny, 1}, {1, 1, 1}, {0, 0, 0});
                    v.kind = ElementKind::float32;
                    v.names = {"fat", "water"};
                    v.real = {pair.fat.v, pair.water.v};
                    nifti::write_nifti(v, subject_dir / "tmp" /
                                              ("swap_slice_s" + std::to_string(s + 1) + ".nii"));
                }
            } catch (const Error&) {
                // diagnostic output only
            }
        } else {
            record.stages["swap"] = {"skipped", "assembly failed"};
            record.stages["anomaly"] = {"skipped", "assembly failed"};
            record.stages["landmarks"] = {"skipped", "assembly failed"};
        }
    }

    // --- T1w: bias correction on the normalized channel when present ---
    if (record.acquisitions["pancreas_t1w"]) {
        StageStatus& stage = record.stages["t1w"];
        try {
            const fs::path dir = raw / "t1w";
            const fs::path norm = dir / "t1w_norm.nii";
            const Volume vol = nifti::read_nifti(fs::exists(norm) ? norm : dir / "t1w.nii");
            const Mask3 mask = intensity_mask(vol, config.assembly.mask_threshold_frac);
            const BiasField field = estimate_bias_field(vol, mask, config.assembly.bias);
            nifti::write_nifti(apply_bias_field(vol, field), subject_dir / "analysis" / "t1w_corrected.nii");
            stage.state = "ok";
        } catch (const Error& e) {
            stage = {"failed", failure_reason(e)};
        }
    }

    // --- Quantification per multiecho acquisition ---
    nlohmann::json quant_json = nlohmann::json::object();
    const std::string liver_primary = record.acquisitions["liver_ideal"] ? "liver_ideal"
                                    : record.acquisitions["liver_gre"]   ? "liver_gre"
                                                                         : "";
    std::optional<Geometry> liver_slice_geom;
    for (const std::string& acq : std::vector<std::string>{"liver_gre", "liver_ideal", "pancreas_gre"}) {
        if (!record.acquisitions[acq]) continue;
        StageStatus& stage = record.stages["quant_" + acq];
        try {
            const EchoSeries series = detail::load_multiecho(raw / acq, config.quantify.phase_scale);
            if (acq == liver_primary) liver_slice_geom = series.volume.geom;

            // slice body mask from the first-echo magnitude
            std::vector<float> mag0(series.volume.nvox());
            for (std::size_t p = 0; p < mag0.size(); ++p) mag0[p] = std::abs(series.volume.cplx[0][p]);
            const float thr = 0.1f * percentile(mag0, 99.0);
            Mask3 mask(mag0.size(), 0);
            for (std::size_t p = 0; p < mag0.size(); ++p) mask[p] = mag0[p] > thr ? 1 : 0;

            const FitMaps maps = fit_map(series, mask, config.quantify);

            std::vector<float> iron(maps.pdff.size(), 0.0f);
            for (std::size_t p = 0; p < iron.size(); ++p)
                if (mask[p]) iron[p] = static_cast<float>(iron_concentration(maps.r2star[p]));

            const fs::path analysis = subject_dir / "analysis";
            const bool primary = acq == liver_primary;
            const auto emit = [&](const char* base, const std::vector<float>& map) {
                nifti::write_nifti(detail::map_to_volume(map, maps.geom, base), analysis / (acq + "_" + base + ".nii"));
                if (primary)
                    nifti::write_nifti(detail::map_to_volume(map, maps.geom, base), analysis / (std::string(base) + ".nii"));
            };
            emit("pdff", maps.pdff);
            emit("r2star", maps.r2star);
            emit("iron", iron);

            // region of interest: external mask when provided, else the body mask
            Mask3 region = mask;
            const fs::path region_path = raw / "masks" / (acq + "_region.nii");
            if (fs::exists(region_path)) {
                const Volume rv = nifti::read_nifti(region_path);
                require(rv.nvox() == region.size(), ErrorCode::geometry_mismatch, "region mask grid differs");
                for (std::size_t p = 0; p < region.size(); ++p) region[p] = rv.real[0][p] > 0.5f ? 1 : 0;
            }
            const RegionSummary pdff_sum = summarize_region(maps.pdff, region);
            const RegionSummary r2s_sum = summarize_region(maps.r2star, region);
            nlohmann::json entry;
            entry["median_pdff_pct"] = pdff_sum.median;
            entry["median_r2star_per_s"] = r2s_sum.median;
            entry["iron_mg_per_g"] = iron_concentration(r2s_sum.median);
            entry["diverged_voxels"] = maps.diverged_count;
            entry["flags"] = nlohmann::json::array();
            if (maps.diverged_count > 0) entry["flags"].push_back("diverged_voxels");
            quant_json[acq] = entry;
            if (primary) {
                quant_json["median_pdff_pct"] = pdff_sum.median;
                quant_json["median_r2star_per_s"] = r2s_sum.median;
                quant_json["iron_mg_per_g"] = iron_concentration(r2s_sum.median);
                quant_json["flags"] = entry["flags"];
            }
            stage.state = "ok";
        } catch (const Error& e) {
            stage = {"failed", failure_reason(e)};
        }
    }
    if (!quant_json.empty()) detail::write_json(quant_json, subject_dir / "summary" / manifest::kQuant);

    // --- Placement QC ---
    nlohmann::json placement = nlohmann::json::object();
    {
        StageStatus& stage = record.stages["placement_liver"];
        const fs::path liver_mask_path = raw / "masks" / "liver_dixon.nii";
        if (!liver_slice_geom) {
            stage = {"skipped", "no liver multiecho acquisition"};
        } else if (!assembled) {
            stage = {"skipped", "no assembled reference"};
        } else if (!fs::exists(liver_mask_path)) {
            stage = {"skipped", "no liver segmentation provided"};
        } else {
            try {
                const Volume lm = nifti::read_nifti(liver_mask_path);
                require(lm.geom.same_grid(assembled->channels.geom, 1e-2), ErrorCode::geometry_mismatch,
                        "liver mask is not on the assembled grid");
                Mask3 mask(lm.nvox(), 0);
                for (std::size_t p = 0; p < mask.size(); ++p) mask[p] = lm.real[0][p] > 0.5f ? 1 : 0;
                const double k = locate_slice(*liver_slice_geom, assembled->channels.geom);
                const PlacementScore score =
                    liver_percent_location(k, mask, assembled->channels.geom, config.placement);
                record.liver_percent = score.percent_location;
                placement["liver"] = placement_json(score);
                stage.state = "ok";
            } catch (const Error& e) {
                stage = {"failed", failure_reason(e)};
            }
        }
    }
    {
        StageStatus& stage = record.stages["placement_pancreas"];
        const fs::path mask_path = raw / "masks" / "pancreas_slice.nii";
        if (!fs::exists(mask_path)) {
            stage = {"skipped", "no pancreas slice mask provided"};
        } else {
            try {
                const Volume pm = nifti::read_nifti(mask_path);
                Mask2 mask(pm.geom.dims[0], pm.geom.dims[1]);
                for (int y = 0; y < mask.ny; ++y)
                    for (int x = 0; x < mask.nx; ++x)
                        mask.at(x, y) = pm.real[0][pm.geom.index(x, y, 0)] > 0.5f ? 1 : 0;
                const double vox_ml =
                    pm.geom.spacing[0] * pm.geom.spacing[1] * pm.geom.spacing[2] / 1000.0;
                const PlacementScore score = pancreas_census(mask, vox_ml);
                record.pancreas_voxels = score.voxel_count;
                placement["pancreas"] = placement_json(score);
                stage.state = "ok";
            } catch (const Error& e) {
                stage = {"failed", failure_reason(e)};
            }
        }
    }
    if (!placement.empty()) detail::write_json(placement, subject_dir / "summary" / manifest::kPlacement);

    // --- Subject summary and tmp cleanup ---
    nlohmann::json summary;
    summary["id"] = record.id;
    summary["manifest_version"] = manifest::kVersion;
    for (const auto& [name, present] : record.acquisitions) summary["acquisitions"][name] = present;
    for (const auto& [name, st] : record.stages) {
        summary["stages"][name]["state"] = st.state;
        if (!st.reason.empty()) summary["stages"][name]["reason"] = st.reason;
    }
    summary["qc"]["swap_count"] = record.swap_count;
    summary["qc"]["anomaly_flags"] = record.anomaly_flags;
    if (!record.joint_status.empty()) summary["qc"]["joints"] = record.joint_status;
    detail::write_json(summary, subject_dir / "summary" / manifest::kSubjectSummary);

    bool any_failed = false;
    for (const auto& [name, st] : record.stages) any_failed = any_failed || st.state == "failed";
    if (!any_failed && !config.keep_tmp) fs::remove_all(subject_dir / "tmp");

    return record;
}

// ---------------------------------------------------------------------------
// Cohort run.
// ---------------------------------------------------------------------------

struct CohortSummary {
    nlohmann::json json;
    std::string csv;
    std::vector<SubjectRecord> records;
};

// Bounded worker pool over subjects; aggregation happens after the join in
// subject order, so summaries are independent of the parallelism level.
inline CohortSummary run_cohort(const fs::path& root, int parallelism, const PipelineConfig& config = {}) {
    std::vector<fs::path> subjects;
    if (fs::is_directory(root))
        for (const auto& entry : fs::directory_iterator(root))
            if (entry.is_directory() && fs::is_directory(entry.path() / "raw")) subjects.push_back(entry.path());
    std::sort(subjects.begin(), subjects.end());

    std::vector<SubjectRecord> records(subjects.size());
    std::vector<std::string> errors(subjects.size());
    std::size_t next = 0;
    std::mutex mu;
    const int workers = std::max(1, std::min<int>(parallelism, static_cast<int>(std::max<std::size_t>(1, subjects.size()))));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (;;) {
                std::size_t idx;
                {
                    std::lock_guard<std::mutex> lock(mu);
                    if (next >= subjects.size()) return;
                    idx = next++;
                }
                try {
                    records[idx] = run_subject(subjects[idx], config);
                } catch (const Error& e) {
                    records[idx].id = subjects[idx].filename().string();
                    records[idx].stages["subject"] = {"failed", failure_reason(e)};
                    errors[idx] = e.what();
                } catch (const std::exception& e) {
                    records[idx].id = subjects[idx].filename().string();
                    records[idx].stages["subject"] = {"failed", "other"};
                    errors[idx] = e.what();
                }
            }
        });
    for (auto& t : pool) t.join();

    // census per acquisition type: processed means the terminal stage succeeded
    const auto stage_for = [](const std::string& acq) {
        if (acq == "dixon") return std::string("assemble");
        if (acq == "pancreas_t1w") return std::string("t1w");
        return "quant_" + acq;
    };
    nlohmann::json series = nlohmann::json::object();
    std::string csv = "series,total,processed,failed\n";
    for (const char* acq : kAcquisitions) {
        std::size_t total = 0, processed = 0;
        std::map<std::string, std::size_t> reasons;
        for (const SubjectRecord& r : records) {
            const auto it = r.acquisitions.find(acq);
            if (it == r.acquisitions.end() || !it->second) continue;
            ++total;
            const auto st = r.stages.find(stage_for(acq));
            if (st != r.stages.end() && st->second.state == "ok")
                ++processed;
            else if (st != r.stages.end())
                ++reasons[st->second.reason.empty() ? "other" : st->second.reason];
            else
                ++reasons["other"];
        }
        series[acq] = {{"total", total}, {"processed", processed}, {"failed", total - processed},
                       {"failure_reasons", reasons}};
        csv += std::string(acq) + "," + std::to_string(total) + "," + std::to_string(processed) + "," +
               std::to_string(total - processed) + "\n";
    }

    // swap census per station/region
    std::map<std::string, std::size_t> swap_census;
    std::size_t swap_total = 0;
    for (const SubjectRecord& r : records)
        for (const auto& [station, region] : r.swaps) {
            ++swap_census["series" + std::to_string(station) + (region == "whole" ? "" : "_" + region)];
            ++swap_total;
        }

    // anomaly census per category plus the multi-anomaly count
    std::map<std::string, std::size_t> anomaly_census;
    std::size_t multi_anomaly = 0;
    for (const SubjectRecord& r : records) {
        for (const std::string& f : r.anomaly_flags) ++anomaly_census[f];
        if (r.anomaly_flags.size() > 1) ++multi_anomaly;
    }

    // landmark coverage per joint
    nlohmann::json joints = nlohmann::json::object();
    {
        std::size_t with_landmarks = 0;
        std::map<std::string, std::size_t> present;
        for (const SubjectRecord& r : records) {
            if (r.joint_status.empty()) continue;
            ++with_landmarks;
            for (const auto& [joint, status] : r.joint_status)
                if (status == "present") ++present[joint];
        }
        joints["subjects"] = with_landmarks;
        for (const char* name : kJointNames) joints[name] = present.count(name) ? present[name] : 0;
    }

    CohortSummary out;
    out.records = records;
    out.json["subjects_total"] = subjects.size();
    out.json["series"] = series;
    out.json["swaps"] = {{"total", swap_total}, {"by_location", swap_census}};
    out.json["anomalies"] = {{"by_category", anomaly_census}, {"more_than_one", multi_anomaly}};
    out.json["joints"] = joints;
    nlohmann::json errs = nlohmann::json::array();
    for (std::size_t i = 0; i < errors.size(); ++i)
        if (!errors[i].empty()) errs.push_back({{"subject", records[i].id}, {"error", errors[i]}});
    out.json["subject_errors"] = errs;
    out.csv = csv;
    return out;
}

// Fig-9-style scatter of liver percent locations across a cohort.
inline void render_placement_scatter(const std::vector<SubjectRecord>& records, const fs::path& path) {
    const int w = 640, h = 400;
    RgbImage img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) img.set(x, y, 255, 255, 255);
    const auto y_of = [&](double pct) {
        return static_cast<int>(std::lround((pct + 20.0) / 140.0 * (h - 1)));
    };
    for (int x = 0; x < w; x += 8) {  // dashed 0% and 100% reference lines
        img.set(x, y_of(0.0), 120, 120, 120);
        img.set(x, y_of(100.0), 120, 120, 120);
    }
    std::vector<double> values;
    for (const SubjectRecord& r : records)
        if (r.liver_percent) values.push_back(*r.liver_percent);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const int x = 20 + static_cast<int>(i * std::max<std::size_t>(1, (w - 40) / std::max<std::size_t>(1, values.size())));
        const int y = y_of(values[i]);
        const bool flagged = values[i] < 5.0 || values[i] > 95.0;
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx)
                img.set(x + dx, y + dy, flagged ? 220 : 30, flagged ? 40 : 90, flagged ? 40 : 200);
    }
    write_png(img, path);
}

}  // namespace abdmri::pipeline
