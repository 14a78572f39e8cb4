#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace abdmri {

// Protocol constants for the neck-to-knee Dixon acquisition: per-series slice
// counts, voxel sizes and matrix shapes, plus the assembled target grid.
namespace protocol {

inline constexpr std::array<int, 3> kAssembledDims = {224, 174, 370};
inline constexpr std::array<double, 3> kAssembledSpacingMm = {2.232, 2.232, 3.0};

struct DixonSeriesSpec {
    int nx, ny, nslices;
    double dz_mm;  // in-plane spacing is always 2.232 mm
};

inline constexpr std::array<DixonSeriesSpec, 6> kDixonSeries = {{
    {224, 168, 64, 3.0},   // neck/shoulders
    {224, 174, 44, 4.5},   // chest
    {224, 174, 44, 4.5},   // abdomen
    {224, 174, 44, 4.5},   // pelvis
    {224, 162, 72, 3.5},   // upper thighs
    {224, 156, 64, 4.0},   // lower thighs/knees
}};

inline const std::vector<double> kGreEchoTimesMs = {2.38,  4.76,  7.15,  9.53,  11.91,
                                                    14.29, 16.67, 19.06, 21.44, 23.82};
inline const std::vector<double> kIdealEchoTimesMs = {1.2, 3.2, 5.2, 7.2, 9.2, 11.2};

inline constexpr double kGreTrMs = 27.0, kGreFlipDeg = 20.0;
inline constexpr double kIdealTrMs = 14.0, kIdealFlipDeg = 5.0;
inline constexpr double kDixonTrMs = 6.67, kDixonFlipDeg = 10.0;

inline constexpr std::array<double, 3> kGreVoxelMm = {2.5, 2.5, 6.0};
inline constexpr std::array<int, 2> kGreMatrix = {160, 160};
inline constexpr std::array<double, 3> kIdealVoxelMm = {1.719, 1.719, 10.0};
inline constexpr std::array<int, 2> kIdealMatrix = {256, 232};

}  // namespace protocol

struct BiasConfig {
    double fwhm_mm = 60.0;
    int max_iterations = 20;
    double update_rms_tol = 1e-3;
    int poly_order = 3;
};

struct AssemblyConfig {
    BiasConfig bias;
    double blend_exponent = 1.0;       // raised-cosine exponent over the overlap
    double mask_threshold_frac = 0.05; // of the 99th percentile, for bias masks
};

struct SwapConfig {
    int crop_voxels = 32;         // removed from each lateral edge
    int shell_radius = 3;         // subcutaneous shell thickness, voxels
    double score_scale = 0.05;    // logistic width on the shell statistic
    double mask_threshold = 0.05; // on the jointly normalized slice
};

struct AnomalyConfig {
    std::array<int, 3> threshold_windows = {31, 61, 121};  // adaptive scales, voxels
    double local_mean_factor = 0.5;
    double global_floor_frac = 0.10;  // of the 99th percentile
    int closing_radius = 2;
    double canny_sigma = 1.2;     // voxels; run thresholds below are the contract
    double canny_low_frac = 0.1;  // of max gradient
    double canny_high_frac = 0.2;
    int run_threshold_both = 10;  // horizontal run > both slices
    int run_threshold_either = 25;
    int interior_margin = 3;         // erosion separating contour from interior clusters
    int head_top_slices = 8;
    double head_width_frac = 0.40;   // of the widest body slice
    double shift_jump_voxels = 15.0; // lateral centroid jump between series
};

struct LandmarkConfig {
    int atlas_count = 35;
    double support_threshold = 0.5;
    int crop_size = 64;
    double refine_top_fraction = 0.10;  // intensity threshold inside the crop
    double min_in_bounds_fraction = 0.5;
};

// Multi-peak fat spectrum relative to water, ppm offsets and relative
// amplitudes (normalized on construction).
struct SpectrumConfig {
    std::vector<double> ppm = {-3.80, -3.40, -2.60, -1.94, -0.39, 0.60};
    std::vector<double> amplitude = {0.087, 0.693, 0.128, 0.004, 0.039, 0.048};
};

struct QuantifyConfig {
    SpectrumConfig spectrum;
    double field_mhz = 63.87;  // 1.5 T proton frequency; Hz per ppm
    double r2star_max = 500.0;
    double psi_smooth_fwhm_mm = 15.0;
    double phase_scale = 3.14159265358979323846 / 4096.0;  // stored phase units -> rad
    double diverged_residual_fraction = 0.25;
    double max_axial_tilt_deg = 20.0;
    int max_lm_iterations = 60;
};

struct PlacementConfig {
    double liver_low_pct = 5.0;
    double liver_high_pct = 95.0;
};

struct PipelineConfig {
    AssemblyConfig assembly;
    SwapConfig swap;
    AnomalyConfig anomaly;
    LandmarkConfig landmarks;
    QuantifyConfig quantify;
    PlacementConfig placement;
    std::string atlas_bank_dir;  // empty -> landmark stage skipped
    int parallelism = 1;
    bool keep_tmp = false;
};

}  // namespace abdmri
