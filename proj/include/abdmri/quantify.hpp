#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <optional>
#include <vector>

#include "abdmri/config.hpp"
#include "abdmri/errors.hpp"
#include "abdmri/image_ops.hpp"
#include "abdmri/stats.hpp"
#include "abdmri/volume.hpp"

namespace abdmri {

using cdouble = std::complex<double>;

// Multi-peak fat spectrum; relative amplitudes are normalized to sum to one.
class FatSpectrum {
  public:
    FatSpectrum() : FatSpectrum(SpectrumConfig{}, QuantifyConfig{}.field_mhz) {}

    FatSpectrum(const SpectrumConfig& cfg, double field_mhz) {
        require(cfg.ppm.size() == cfg.amplitude.size() && !cfg.ppm.empty(), ErrorCode::invalid_config,
                "spectrum ppm/amplitude lists disagree");
        double sum = 0.0;
        for (const double a : cfg.amplitude) {
            require(a > 0.0, ErrorCode::invalid_config, "spectrum amplitudes must be positive");
            sum += a;
        }
        for (std::size_t p = 0; p < cfg.ppm.size(); ++p) {
            freq_hz_.push_back(cfg.ppm[p] * field_mhz);  // 1 ppm = field[MHz] Hz
            amp_.push_back(cfg.amplitude[p] / sum);
        }
    }

    // Net fat phasor at echo time t (seconds).
    [[nodiscard]] cdouble phasor(double t_s) const {
        cdouble a{0.0, 0.0};
        for (std::size_t p = 0; p < amp_.size(); ++p)
            a += amp_[p] * std::polar(1.0, 2.0 * 3.14159265358979323846 * freq_hz_[p] * t_s);
        return a;
    }

    [[nodiscard]] const std::vector<double>& amplitudes() const { return amp_; }
    [[nodiscard]] const std::vector<double>& frequencies_hz() const { return freq_hz_; }

  private:
    std::vector<double> freq_hz_;
    std::vector<double> amp_;
};

struct FatModelParams {
    double water = 0.0;    // signal units, >= 0
    double fat = 0.0;      // signal units, >= 0
    double r2star = 0.0;   // 1/s, bounded
    double psi_hz = 0.0;   // field offset
    double phi0 = 0.0;     // shared initial phase, rad
};

// s(t_n) = e^{i phi0} (W + F sum_p a_p e^{i 2 pi df_p t_n}) e^{-R2* t_n} e^{i 2 pi psi t_n}
inline std::vector<cdouble> forward_signal(const FatModelParams& p, const FatSpectrum& spectrum,
                                           const std::vector<double>& echo_times_ms) {
    std::vector<cdouble> s(echo_times_ms.size());
    const cdouble e0 = std::polar(1.0, p.phi0);
    for (std::size_t n = 0; n < s.size(); ++n) {
        const double t = echo_times_ms[n] * 1e-3;
        const cdouble env = std::exp(cdouble{-p.r2star * t, 2.0 * 3.14159265358979323846 * p.psi_hz * t});
        s[n] = e0 * (p.water + p.fat * spectrum.phasor(t)) * env;
    }
    return s;
}

// Analytic complex derivatives w.r.t. (W, F, R2*, psi, phi0), one row per echo.
inline std::vector<std::array<cdouble, 5>> forward_jacobian(const FatModelParams& p, const FatSpectrum& spectrum,
                                                            const std::vector<double>& echo_times_ms) {
    std::vector<std::array<cdouble, 5>> jac(echo_times_ms.size());
    const cdouble e0 = std::polar(1.0, p.phi0);
    const cdouble i2pi{0.0, 2.0 * 3.14159265358979323846};
    for (std::size_t n = 0; n < jac.size(); ++n) {
        const double t = echo_times_ms[n] * 1e-3;
        const cdouble env = std::exp(cdouble{-p.r2star * t, 2.0 * 3.14159265358979323846 * p.psi_hz * t});
        const cdouble a = spectrum.phasor(t);
        const cdouble s = e0 * (p.water + p.fat * a) * env;
        jac[n][0] = e0 * env;
        jac[n][1] = e0 * a * env;
        jac[n][2] = -t * s;
        jac[n][3] = i2pi * t * s;
        jac[n][4] = cdouble{0.0, 1.0} * s;
    }
    return jac;
}

struct FatFitResult {
    double pdff = 0.0;          // percent, 0..100
    double r2star = 0.0;        // 1/s
    double water_amp = 0.0;
    double fat_amp = 0.0;
    double field_offset_hz = 0.0;
    double phi0 = 0.0;
    double residual_norm = 0.0;
    bool diverged = false;
};

namespace detail {

struct LmProblem {
    const std::vector<cdouble>* signal;
    const std::vector<double>* echo_times_ms;
    const FatSpectrum* spectrum;
    double r2star_max;
    double psi_bound_hz;
    std::array<bool, 5> free_param = {true, true, true, true, true};
};

inline void clamp_params(FatModelParams& p, const LmProblem& prob) {
    p.water = std::max(0.0, p.water);
    p.fat = std::max(0.0, p.fat);
    p.r2star = std::clamp(p.r2star, 0.0, prob.r2star_max);
    p.psi_hz = std::clamp(p.psi_hz, -prob.psi_bound_hz, prob.psi_bound_hz);
}

inline double cost_of(const FatModelParams& p, const LmProblem& prob) {
    const std::vector<cdouble> model = forward_signal(p, *prob.spectrum, *prob.echo_times_ms);
    double c = 0.0;
    for (std::size_t n = 0; n < model.size(); ++n) c += std::norm(model[n] - (*prob.signal)[n]);
    return c;
}

inline double get_param(const FatModelParams& p, int a) {
    switch (a) {
        case 0: return p.water;
        case 1: return p.fat;
        case 2: return p.r2star;
        case 3: return p.psi_hz;
        default: return p.phi0;
    }
}

inline void set_param(FatModelParams& p, int a, double v) {
    switch (a) {
        case 0: p.water = v; break;
        case 1: p.fat = v; break;
        case 2: p.r2star = v; break;
        case 3: p.psi_hz = v; break;
        default: p.phi0 = v; break;
    }
}

// Damped Gauss-Newton with analytic Jacobian, box constraints by projection.
inline double levenberg_marquardt(FatModelParams& p, const LmProblem& prob, int max_iterations) {
    clamp_params(p, prob);
    double cost = cost_of(p, prob);
    double lambda = 1e-3;
    for (int it = 0; it < max_iterations; ++it) {
        const std::vector<cdouble> model = forward_signal(p, *prob.spectrum, *prob.echo_times_ms);
        const std::vector<std::array<cdouble, 5>> jac = forward_jacobian(p, *prob.spectrum, *prob.echo_times_ms);

        double h[5][5] = {};
        double g[5] = {};
        for (std::size_t n = 0; n < model.size(); ++n) {
            const cdouble r = model[n] - (*prob.signal)[n];
            for (int a = 0; a < 5; ++a) {
                if (!prob.free_param[static_cast<std::size_t>(a)]) continue;
                g[a] += jac[n][static_cast<std::size_t>(a)].real() * r.real() +
                        jac[n][static_cast<std::size_t>(a)].imag() * r.imag();
                for (int b = 0; b <= a; ++b) {
                    if (!prob.free_param[static_cast<std::size_t>(b)]) continue;
                    h[a][b] += jac[n][static_cast<std::size_t>(a)].real() * jac[n][static_cast<std::size_t>(b)].real() +
                               jac[n][static_cast<std::size_t>(a)].imag() * jac[n][static_cast<std::size_t>(b)].imag();
                }
            }
        }

        bool improved = false;
        for (int attempt = 0; attempt < 8 && !improved; ++attempt) {
            std::vector<double> a_mat(25, 0.0), rhs(5, 0.0), delta;
            for (int a = 0; a < 5; ++a) {
                for (int b = 0; b <= a; ++b) {
                    a_mat[static_cast<std::size_t>(a) * 5 + b] = a_mat[static_cast<std::size_t>(b) * 5 + a] = h[a][b];
                }
            }
            for (int a = 0; a < 5; ++a) {
                const double diag = h[a][a] > 0.0 ? h[a][a] : 1.0;
                a_mat[static_cast<std::size_t>(a) * 5 + a] =
                    prob.free_param[static_cast<std::size_t>(a)] ? h[a][a] + lambda * diag : 1.0;
                rhs[static_cast<std::size_t>(a)] = prob.free_param[static_cast<std::size_t>(a)] ? -g[a] : 0.0;
            }
            if (!solve_spd(a_mat, rhs, 5, delta)) {
                lambda *= 10.0;
                continue;
            }
            FatModelParams trial = p;
            for (int a = 0; a < 5; ++a)
                if (prob.free_param[static_cast<std::size_t>(a)])
                    set_param(trial, a, get_param(trial, a) + delta[static_cast<std::size_t>(a)]);
            clamp_params(trial, prob);
            const double trial_cost = cost_of(trial, prob);
            if (trial_cost < cost) {
                const double drop = cost - trial_cost;
                p = trial;
                cost = trial_cost;
                lambda = std::max(1e-12, lambda / 3.0);
                improved = true;
                if (drop < 1e-14 * (1.0 + cost)) return cost;
            } else {
                lambda *= 4.0;
            }
        }
        if (!improved) break;
    }
    return cost;
}

[[nodiscard]] inline double psi_bound_hz(const std::vector<double>& echo_times_ms) {
    double min_dt = 1e30;
    for (std::size_t n = 1; n < echo_times_ms.size(); ++n)
        min_dt = std::min(min_dt, (echo_times_ms[n] - echo_times_ms[n - 1]) * 1e-3);
    return 0.5 / min_dt;
}

}  // namespace detail

// Voxelwise fit with multi-start over the water- and fat-dominant basins.
// `init` adds an extra warm start (e.g. the neighboring voxel's solution).
inline FatFitResult fit_voxel(const std::vector<cdouble>& signal, const std::vector<double>& echo_times_ms,
                              const FatSpectrum& spectrum, const QuantifyConfig& cfg = {},
                              const std::optional<FatModelParams>& init = std::nullopt) {
    require(echo_times_ms.size() >= 5, ErrorCode::insufficient_echoes,
            "need >= 5 echoes for {W, F, R2*, psi, phi0}");
    require(signal.size() == echo_times_ms.size(), ErrorCode::invalid_volume, "signal/echo count mismatch");
    for (const cdouble& s : signal)
        require(std::isfinite(s.real()) && std::isfinite(s.imag()), ErrorCode::corrupt_echo,
                "non-finite echo sample");

    detail::LmProblem prob;
    prob.signal = &signal;
    prob.echo_times_ms = &echo_times_ms;
    prob.spectrum = &spectrum;
    prob.r2star_max = cfg.r2star_max;
    prob.psi_bound_hz = detail::psi_bound_hz(echo_times_ms);

    double m0 = 0.0;
    for (const cdouble& s : signal) m0 = std::max(m0, std::abs(s));
    const double phi_init = std::arg(signal[0]);

    std::vector<FatModelParams> starts;
    starts.push_back({0.95 * m0, 0.05 * m0, 30.0, 0.0, phi_init});
    starts.push_back({0.05 * m0, 0.95 * m0, 30.0, 0.0, phi_init});
    if (init) starts.push_back(*init);

    FatModelParams best{};
    double best_cost = 1e300;
    for (FatModelParams p : starts) {
        const double c = detail::levenberg_marquardt(p, prob, cfg.max_lm_iterations);
        if (c < best_cost) {
            best_cost = c;
            best = p;
        }
    }

    double total = 0.0;
    for (const cdouble& s : signal) total += std::norm(s);

    FatFitResult out;
    out.water_amp = best.water;
    out.fat_amp = best.fat;
    out.r2star = best.r2star;
    out.field_offset_hz = best.psi_hz;
    out.phi0 = best.phi0;
    out.pdff = (best.water + best.fat) > 0.0 ? 100.0 * best.fat / (best.water + best.fat) : 0.0;
    out.residual_norm = std::sqrt(best_cost);
    out.diverged = total > 0.0 && best_cost > cfg.diverged_residual_fraction * total;
    return out;
}

// ---------------------------------------------------------------------------
// Map fitting: raster warm start, then a second pass with the smoothed field
// offset held fixed.
// ---------------------------------------------------------------------------

struct FitMaps {
    Geometry geom;
    std::vector<float> pdff;        // percent
    std::vector<float> r2star;      // 1/s
    std::vector<float> field_hz;
    std::vector<float> water, fat;
    std::vector<float> residual;
    Mask3 fitted;                   // voxels inside the mask
    Mask3 diverged;
    std::size_t diverged_count = 0;
};

// Rejects non-axial slices: the slice normal must stay within
// `max_axial_tilt_deg` of the world z axis.
inline void require_axial(const Geometry& g, double max_tilt_deg) {
    const Vec3 n = g.affine.column(2);
    const double cosz = std::abs(n[2]) / norm(n);
    require(cosz >= std::cos(max_tilt_deg * 3.14159265358979323846 / 180.0), ErrorCode::non_axial_acquisition,
            "slice not acquired in the axial plane");
}

inline FitMaps fit_map(const EchoSeries& series, const Mask3& mask, const QuantifyConfig& cfg = {}) {
    series.validate(5);
    require_axial(series.volume.geom, cfg.max_axial_tilt_deg);
    const Geometry& g = series.volume.geom;
    require(mask.size() == g.nvox(), ErrorCode::geometry_mismatch, "mask size disagrees with slice");
    for (const auto& ch : series.volume.cplx)
        for (const cfloat& v : ch)
            require(std::isfinite(v.real()) && std::isfinite(v.imag()), ErrorCode::corrupt_echo,
                    "corrupted echo data");

    const FatSpectrum spectrum(cfg.spectrum, cfg.field_mhz);
    const std::size_t n = g.nvox();
    const std::size_t echoes = series.echo_count();

    FitMaps maps;
    maps.geom = g;
    maps.pdff.assign(n, 0.0f);
    maps.r2star.assign(n, 0.0f);
    maps.field_hz.assign(n, 0.0f);
    maps.water.assign(n, 0.0f);
    maps.fat.assign(n, 0.0f);
    maps.residual.assign(n, 0.0f);
    maps.fitted = mask;
    maps.diverged.assign(n, 0);

    std::vector<cdouble> sig(echoes);
    const auto gather = [&](std::size_t p) {
        for (std::size_t e = 0; e < echoes; ++e) {
            const cfloat v = series.volume.cplx[e][p];
            sig[e] = cdouble{v.real(), v.imag()};
        }
    };

    // pass 1: raster order, warm-started from the previous in-mask voxel
    std::vector<FatModelParams> solution(n);
    std::optional<FatModelParams> warm;
    for (std::size_t p = 0; p < n; ++p) {
        if (!mask[p]) continue;
        gather(p);
        const FatFitResult r = fit_voxel(sig, series.echo_times_ms, spectrum, cfg, warm);
        solution[p] = {r.water_amp, r.fat_amp, r.r2star, r.field_offset_hz, r.phi0};
        maps.field_hz[p] = static_cast<float>(r.field_offset_hz);
        warm = solution[p];
    }

    // phase regularization analog: hold the smoothed field fixed and refit
    const double sigma_mm = cfg.psi_smooth_fwhm_mm / 2.3548200450309493;
    const Vec3 sigma_vox = {sigma_mm / g.spacing[0], sigma_mm / g.spacing[1], 0.0};
    const std::vector<float> smooth_field = masked_gaussian_3d(maps.field_hz, mask, g.dims, sigma_vox);

    detail::LmProblem prob;
    prob.echo_times_ms = &series.echo_times_ms;
    prob.spectrum = &spectrum;
    prob.r2star_max = cfg.r2star_max;
    prob.psi_bound_hz = detail::psi_bound_hz(series.echo_times_ms);
    prob.free_param = {true, true, true, false, true};

    for (std::size_t p = 0; p < n; ++p) {
        if (!mask[p]) continue;
        gather(p);
        prob.signal = &sig;
        FatModelParams fixed = solution[p];
        fixed.psi_hz = std::clamp(double(smooth_field[p]), -prob.psi_bound_hz, prob.psi_bound_hz);
        const double cost = detail::levenberg_marquardt(fixed, prob, cfg.max_lm_iterations);

        double total = 0.0;
        for (const cdouble& s : sig) total += std::norm(s);
        maps.water[p] = static_cast<float>(fixed.water);
        maps.fat[p] = static_cast<float>(fixed.fat);
        maps.r2star[p] = static_cast<float>(std::clamp(fixed.r2star, 0.0, cfg.r2star_max));
        maps.field_hz[p] = static_cast<float>(fixed.psi_hz);
        const double denom = fixed.water + fixed.fat;
        maps.pdff[p] = static_cast<float>(std::clamp(denom > 0.0 ? 100.0 * fixed.fat / denom : 0.0, 0.0, 100.0));
        maps.residual[p] = static_cast<float>(std::sqrt(cost));
        if (total > 0.0 && cost > cfg.diverged_residual_fraction * total) {
            maps.diverged[p] = 1;
            ++maps.diverged_count;
        }
    }
    return maps;
}

// ---------------------------------------------------------------------------
// Iron conversion and protocol harmonization.
// ---------------------------------------------------------------------------

// iron (mg/g) = 0.202 + 0.0254 * R2*
inline double iron_concentration(double r2star) {
    require(r2star >= 0.0, ErrorCode::negative_r2star, "R2* must be nonnegative");
    return 0.202 + 0.0254 * r2star;
}

struct HarmonizationModel {
    std::string kind;  // "linear" or "quadratic"
    std::vector<double> coefficients;  // intercept, slope[, quad]
    double adjusted_r2 = 0.0;
};

struct HarmonizationFit {
    HarmonizationModel linear;
    std::optional<HarmonizationModel> quadratic;
    double f_stat = 0.0;
    double p_value = 1.0;
    double identity_crossing_pct = 0.0;  // where the linear model meets y = x
    std::size_t n = 0;
};

// OLS for y = a + b x (and + c x^2), with the nested-model F-test on the
// quadratic term.
inline HarmonizationFit harmonize_fit(const std::vector<std::array<double, 2>>& pairs) {
    require(pairs.size() >= 3, ErrorCode::degenerate_design, "need >= 3 pairs");
    std::vector<std::vector<double>> lin_rows, quad_rows;
    std::vector<double> y;
    for (const auto& p : pairs) {
        lin_rows.push_back({1.0, p[0]});
        quad_rows.push_back({1.0, p[0], p[0] * p[0]});
        y.push_back(p[1]);
    }
    const OlsFit lin = ols(lin_rows, y);

    HarmonizationFit fit;
    fit.n = pairs.size();
    fit.linear = {"linear", lin.coef, lin.adjusted_r2};
    const double slope = lin.coef[1];
    fit.identity_crossing_pct = std::abs(1.0 - slope) > 1e-12 ? lin.coef[0] / (1.0 - slope) : 0.0;

    if (pairs.size() >= 4) {
        const OlsFit quad = ols(quad_rows, y);
        fit.quadratic = HarmonizationModel{"quadratic", quad.coef, quad.adjusted_r2};
        const double dof2 = double(pairs.size()) - 3.0;
        if (quad.rss > 0.0 && dof2 > 0.0) {
            fit.f_stat = (lin.rss - quad.rss) / (quad.rss / dof2);
            fit.p_value = f_tail_probability(fit.f_stat, 1.0, dof2);
        }
    }
    return fit;
}

// Order statistics of a fitted map over a region mask.
inline RegionSummary summarize_region(const std::vector<float>& map, const Mask3& mask) {
    require(map.size() == mask.size(), ErrorCode::geometry_mismatch, "map/mask size mismatch");
    std::vector<double> values;
    for (std::size_t i = 0; i < map.size(); ++i)
        if (mask[i]) values.push_back(map[i]);
    return summarize_values(std::move(values));
}

}  // namespace abdmri
