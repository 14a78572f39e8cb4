// Command-line surface for the abdominal MRI preprocessing/QC/quantification
// pipeline. Exit codes: 0 ok, 1 usage, 2 data failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "abdmri/anomaly.hpp"
#include "abdmri/assembly.hpp"
#include "abdmri/config.hpp"
#include "abdmri/landmarks.hpp"
#include "abdmri/phantom.hpp"
#include "abdmri/pipeline.hpp"
#include "abdmri/placement.hpp"
#include "abdmri/quantify.hpp"
#include "abdmri/swap.hpp"

namespace fs = std::filesystem;
using namespace abdmri;

namespace {

void add_config_options(CLI::App& app, PipelineConfig& cfg, std::string& atlas_bank) {
    app.add_option("--bias-fwhm-mm", cfg.assembly.bias.fwhm_mm, "Bias smoother FWHM in mm");
    app.add_option("--bias-max-iterations", cfg.assembly.bias.max_iterations, "Bias iteration cap");
    app.add_option("--blend-exponent", cfg.assembly.blend_exponent, "Overlap blend exponent");
    app.add_option("--swap-crop", cfg.swap.crop_voxels, "Lateral crop for swap slices");
    app.add_option("--swap-shell-radius", cfg.swap.shell_radius, "Subcutaneous shell radius (voxels)");
    app.add_option("--canny-sigma", cfg.anomaly.canny_sigma, "Canny smoothing sigma (voxels)");
    app.add_option("--run-threshold-both", cfg.anomaly.run_threshold_both, "Dual-slice run threshold");
    app.add_option("--run-threshold-either", cfg.anomaly.run_threshold_either, "Single-slice run threshold");
    app.add_option("--head-width-frac", cfg.anomaly.head_width_frac, "Head/neck width fraction");
    app.add_option("--shift-jump-voxels", cfg.anomaly.shift_jump_voxels, "Series shift centroid jump");
    app.add_option("--atlas-bank", atlas_bank, "Atlas bank directory");
    app.add_option("--atlas-k", cfg.landmarks.atlas_count, "Atlases per subject");
    app.add_option("--crop-size", cfg.landmarks.crop_size, "Refinement crop edge (voxels)");
    app.add_option("--field-mhz", cfg.quantify.field_mhz, "Proton frequency (MHz)");
    app.add_option("--r2star-max", cfg.quantify.r2star_max, "R2* upper bound (1/s)");
    app.add_option("--psi-smooth-fwhm-mm", cfg.quantify.psi_smooth_fwhm_mm, "Field-map smoothing FWHM");
    app.add_option("--phase-scale", cfg.quantify.phase_scale, "Stored phase unit in rad");
    app.add_option("--spectrum-ppm", cfg.quantify.spectrum.ppm, "Fat peak ppm offsets");
    app.add_option("--spectrum-amplitude", cfg.quantify.spectrum.amplitude, "Fat peak relative amplitudes");
    app.add_option("--liver-low-pct", cfg.placement.liver_low_pct, "Liver placement lower threshold");
    app.add_option("--liver-high-pct", cfg.placement.liver_high_pct, "Liver placement upper threshold");
    app.add_option("--parallelism", cfg.parallelism, "Cohort worker count");
    app.add_flag("--keep-tmp", cfg.keep_tmp, "Keep tmp/ after a successful run");
}

DixonSubject load_subject(const fs::path& dir) { return pipeline::detail::load_dixon(dir / "raw" / "dixon"); }

int run_cli(int argc, char** argv) {
    CLI::App app{"abdmri: neck-to-knee Dixon assembly, QC, and PDFF/R2* quantification"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Read options from an INI file");
    app.allow_config_extras(CLI::config_extras_mode::ignore);

    PipelineConfig cfg;
    std::string atlas_bank;
    add_config_options(app, cfg, atlas_bank);

    std::string subject_dir, root_dir, csv_path, out_path, acq;

    CLI::App* assemble_cmd = app.add_subcommand("assemble", "Assemble the six Dixon series");
    assemble_cmd->add_option("subject", subject_dir, "Subject directory")->required();

    CLI::App* swaps_cmd = app.add_subcommand("swaps", "Run the eight fat-water swap checks");
    swaps_cmd->add_option("subject", subject_dir, "Subject directory")->required();
    bool apply_correction = false;
    swaps_cmd->add_flag("--correct", apply_correction, "Write corrected channels back to raw/");

    CLI::App* anomaly_cmd = app.add_subcommand("anomaly", "Detect anomalies on the assembled volume");
    anomaly_cmd->add_option("subject", subject_dir, "Subject directory")->required();

    CLI::App* landmarks_cmd = app.add_subcommand("landmarks", "Locate the six bone joints");
    landmarks_cmd->add_option("subject", subject_dir, "Subject directory")->required();

    CLI::App* quant_cmd = app.add_subcommand("quant", "Fit PDFF/R2* maps for multiecho acquisitions");
    quant_cmd->add_option("subject", subject_dir, "Subject directory")->required();
    quant_cmd->add_option("--acq", acq, "Restrict to one acquisition (liver_gre|liver_ideal|pancreas_gre)");

    CLI::App* placement_cmd = app.add_subcommand("placement", "Score single-slice anatomical coverage");
    placement_cmd->add_option("subject", subject_dir, "Subject directory")->required();

    CLI::App* harmonize_cmd = app.add_subcommand("harmonize", "Fit the GRE/IDEAL harmonization regression");
    harmonize_cmd->add_option("--csv", csv_path, "Two-column CSV of paired medians (gre,ideal)")->required();
    harmonize_cmd->add_option("--out", out_path, "Write the fit as JSON");

    CLI::App* phantom_cmd = app.add_subcommand("phantom", "Emit synthetic subject directories with truth");
    std::string phantom_out, preset = "default";
    std::uint64_t seed = 1;
    int n_subjects = 1, atlas_n = 0;
    double atlas_jitter = 3.0, height = 0.0, fov_shift = 0.0, snr = -1.0, liver_slice_pct = -1.0;
    std::vector<std::string> inject_swap, inject_dropout, inject_notch, inject_shift;
    bool inject_gain = false;
    std::string atlas_out;
    phantom_cmd->add_option("--out", phantom_out, "Output directory");
    phantom_cmd->add_option("--seed", seed, "Generator seed");
    phantom_cmd->add_option("--preset", preset, "default|uniform_cylinder|tall|high_position");
    phantom_cmd->add_option("--subjects", n_subjects, "Number of subjects");
    phantom_cmd->add_option("--height-mm", height, "Override subject height");
    phantom_cmd->add_option("--fov-shift-mm", fov_shift, "Shift anatomy superiorly");
    phantom_cmd->add_option("--snr", snr, "Dixon SNR (<=0 noiseless)");
    phantom_cmd->add_option("--liver-slice-percent", liver_slice_pct, "Liver slice position");
    phantom_cmd->add_option("--inject-swap", inject_swap, "station[:whole|left_half|right_half]");
    phantom_cmd->add_option("--inject-dropout", inject_dropout, "chest|knee|other");
    phantom_cmd->add_option("--inject-notch", inject_notch, "width[:coronal|sagittal|both]");
    phantom_cmd->add_option("--inject-series-shift", inject_shift, "station:dx_mm");
    phantom_cmd->add_flag("--inject-bias-gain", inject_gain, "Apply a smooth gain field");
    phantom_cmd->add_option("--atlas-bank-out", atlas_out, "Also emit an atlas bank");
    phantom_cmd->add_option("--atlas-count", atlas_n, "Bank size");
    phantom_cmd->add_option("--atlas-jitter-mm", atlas_jitter, "Landmark jitter sigma");

    CLI::App* run_cmd = app.add_subcommand("run", "Run all applicable stages for one subject");
    run_cmd->add_option("subject", subject_dir, "Subject directory")->required();

    CLI::App* cohort_cmd = app.add_subcommand("cohort", "Run a directory of subjects and summarize");
    cohort_cmd->add_option("root", root_dir, "Cohort root directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }
    cfg.atlas_bank_dir = atlas_bank;

    if (assemble_cmd->parsed()) {
        const fs::path dir(subject_dir);
        const DixonSubject subject = load_subject(dir);
        const AssembledVolume assembled = assemble(subject, cfg.assembly);
        fs::create_directories(dir / "nifti");
        fs::create_directories(dir / "summary");
        for (std::size_t c = 0; c < 4; ++c)
            nifti::write_nifti(extract_channel(assembled.channels, kDixonChannels[c]),
                               dir / "nifti" / pipeline::manifest::kAssembledFiles[c]);
        pipeline::detail::write_json(provenance_json(assembled), dir / "summary" / pipeline::manifest::kProvenance);
        std::cout << "assembled " << dir << " -> nifti/{in,opp,fat,water}.nii\n";
        return 0;
    }

    if (swaps_cmd->parsed()) {
        const fs::path dir(subject_dir);
        DixonSubject subject = load_subject(dir);
        SwapReport report = run_swap_checks(subject, cfg.swap);
        if (apply_correction) {
            const DixonSubject corrected = correct_swaps(subject, report);
            const std::vector<int> order = detail::stations_by_z(corrected);
            for (int s = 0; s < 6; ++s) {
                const DixonSeries& series = corrected.series[static_cast<std::size_t>(order[static_cast<std::size_t>(s)])];
                const std::string stem = "series" + std::to_string(s + 1);
                nifti::write_nifti(*series.fat, dir / "raw" / "dixon" / (stem + "_fat.nii"));
                nifti::write_nifti(*series.water, dir / "raw" / "dixon" / (stem + "_water.nii"));
            }
        }
        fs::create_directories(dir / "summary");
        pipeline::detail::write_json(swap_report_json(report), dir / "summary" / pipeline::manifest::kSwaps);
        std::cout << swap_report_json(report).dump(2) << "\n";
        return 0;
    }

    if (anomaly_cmd->parsed()) {
        const fs::path dir(subject_dir);
        const DixonSubject subject = load_subject(dir);
        const AssembledVolume assembled = assemble(subject, cfg.assembly);
        const AnomalyReport report = detect_anomalies(assembled, cfg.anomaly);
        fs::create_directories(dir / "summary");
        pipeline::detail::write_json(anomaly_report_json(report), dir / "summary" / pipeline::manifest::kAnomaly);
        std::cout << anomaly_report_json(report).dump(2) << "\n";
        return report.flags.empty() ? 0 : 2;
    }

    if (landmarks_cmd->parsed()) {
        require(!cfg.atlas_bank_dir.empty(), ErrorCode::invalid_config, "--atlas-bank is required");
        const fs::path dir(subject_dir);
        const DixonSubject subject = load_subject(dir);
        const AssembledVolume assembled = assemble(subject, cfg.assembly);
        const BodyMask body = body_mask(extract_channel(assembled.channels, "in"), cfg.anomaly);
        const std::vector<Atlas> bank = load_atlas_bank(cfg.atlas_bank_dir);
        const JointDetection joints =
            detect_joints(assembled, body, subject.sex, subject.height_mm, bank, cfg.landmarks);
        fs::create_directories(dir / "landmarks");
        pipeline::detail::write_json(joints_json(joints), dir / "landmarks" / pipeline::manifest::kJoints);
        std::cout << joints_json(joints).dump(2) << "\n";
        return 0;
    }

    if (quant_cmd->parsed() || placement_cmd->parsed() || run_cmd->parsed()) {
        // single-subject chains share run_subject; quant/placement simply run
        // the full dependency-ordered pipeline for their stage outputs
        const pipeline::SubjectRecord record = pipeline::run_subject(subject_dir, cfg);
        bool failed = false;
        for (const auto& [name, st] : record.stages) {
            std::cout << name << ": " << st.state << (st.reason.empty() ? "" : " (" + st.reason + ")") << "\n";
            failed = failed || st.state == "failed";
        }
        return failed ? 2 : 0;
    }

    if (harmonize_cmd->parsed()) {
        std::ifstream in(csv_path);
        require(in.good(), ErrorCode::io_failure, "cannot open " + csv_path);
        std::vector<std::array<double, 2>> pairs;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::replace(line.begin(), line.end(), ',', ' ');
            std::istringstream ls(line);
            double a, b;
            if (ls >> a >> b) pairs.push_back({a, b});
        }
        const HarmonizationFit fit = harmonize_fit(pairs);
        nlohmann::json j;
        j["n"] = fit.n;
        j["linear"] = {{"intercept", fit.linear.coefficients[0]},
                       {"slope", fit.linear.coefficients[1]},
                       {"adjusted_r2", fit.linear.adjusted_r2}};
        if (fit.quadratic)
            j["quadratic"] = {{"intercept", fit.quadratic->coefficients[0]},
                              {"slope", fit.quadratic->coefficients[1]},
                              {"quad", fit.quadratic->coefficients[2]},
                              {"adjusted_r2", fit.quadratic->adjusted_r2}};
        j["f_stat"] = fit.f_stat;
        j["p_value"] = fit.p_value;
        j["identity_crossing_pct"] = fit.identity_crossing_pct;
        if (!out_path.empty()) pipeline::detail::write_json(j, out_path);
        std::cout << j.dump(2) << "\n";
        return 0;
    }

    if (phantom_cmd->parsed()) {
        if (!atlas_out.empty()) {
            const int n = atlas_n > 0 ? atlas_n : 70;
            save_atlas_bank(phantom::make_atlas_bank(n, seed, atlas_jitter), atlas_out);
            std::cout << "wrote atlas bank (" << n << ") to " << atlas_out << "\n";
            if (phantom_out.empty()) return 0;
        }
        require(!phantom_out.empty(), ErrorCode::invalid_config, "--out is required");

        for (int s = 0; s < n_subjects; ++s) {
            phantom::PhantomConfig pc;
            const std::uint64_t subj_seed = Rng::derive(seed, static_cast<std::uint64_t>(s));
            if (preset == "uniform_cylinder") pc = phantom::uniform_cylinder_config(subj_seed);
            else if (preset == "tall") pc = phantom::tall_config(subj_seed);
            else if (preset == "high_position") pc = phantom::high_position_config(subj_seed);
            else pc = phantom::default_config(subj_seed);
            if (height > 0.0) pc.anatomy.height_mm = height;
            if (fov_shift != 0.0) pc.anatomy.fov_shift_mm = fov_shift;
            if (snr >= 0.0) pc.snr = snr;
            if (liver_slice_pct >= 0.0) pc.liver_slice_percent = liver_slice_pct;
            for (const std::string& spec : inject_swap) {
                const auto colon = spec.find(':');
                phantom::Defect d = phantom::make_swap_defect(std::stoi(spec.substr(0, colon)));
                if (colon != std::string::npos) {
                    const std::string region = spec.substr(colon + 1);
                    d.region = region == "left_half" ? SwapRegion::left_half
                             : region == "right_half" ? SwapRegion::right_half
                                                      : SwapRegion::whole;
                }
                pc.defects.push_back(d);
            }
            for (const std::string& loc : inject_dropout)
                pc.defects.push_back(phantom::make_dropout_defect(pc.anatomy, loc));
            for (const std::string& spec : inject_notch) {
                const auto colon = spec.find(':');
                const int width = std::stoi(spec.substr(0, colon));
                const std::string where = colon == std::string::npos ? "both" : spec.substr(colon + 1);
                if (where == "coronal" || where == "both")
                    pc.defects.push_back(phantom::make_notch_defect(width, -400.0, false));
                if (where == "sagittal" || where == "both")
                    pc.defects.push_back(phantom::make_notch_defect(width, -400.0, true));
            }
            for (const std::string& spec : inject_shift) {
                const auto colon = spec.find(':');
                require(colon != std::string::npos, ErrorCode::invalid_config, "use station:dx_mm");
                pc.defects.push_back(phantom::make_series_shift_defect(std::stoi(spec.substr(0, colon)),
                                                                       std::stod(spec.substr(colon + 1))));
            }
            if (inject_gain)
                pc.defects.push_back(phantom::make_bias_gain_defect({0.15, 0.10, -0.12, 0.05}));
            const fs::path dir = n_subjects == 1 ? fs::path(phantom_out)
                                                 : fs::path(phantom_out) / ("subject_" + std::to_string(s));
            phantom::write_subject(dir, pc, cfg.quantify);
            std::cout << "wrote phantom subject " << dir << "\n";
        }
        return 0;
    }

    if (cohort_cmd->parsed()) {
        const pipeline::CohortSummary summary = pipeline::run_cohort(root_dir, cfg.parallelism, cfg);
        if (summary.records.empty())
            std::cerr << "warning: no subject directories under " << root_dir << "\n";
        pipeline::detail::write_json(summary.json, fs::path(root_dir) / "cohort_summary.json");
        std::ofstream csv(fs::path(root_dir) / "cohort.csv", std::ios::trunc);
        csv << summary.csv;
        bool any_liver = false;
        for (const auto& r : summary.records) any_liver = any_liver || r.liver_percent.has_value();
        if (any_liver)
            pipeline::render_placement_scatter(summary.records, fs::path(root_dir) / "placement_scatter.png");
        std::cout << summary.json.dump(2) << "\n";
        return 0;
    }

    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
