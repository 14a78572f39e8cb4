#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "abdmri/errors.hpp"

namespace abdmri {

// ---------------------------------------------------------------------------
// Small dense solvers.
// ---------------------------------------------------------------------------

// Solves A x = b for symmetric positive definite A (row-major n x n) via
// Cholesky. Returns false when the factorization breaks down.
inline bool solve_spd(std::vector<double> a, std::vector<double> b, int n, std::vector<double>& x) {
    for (int c = 0; c < n; ++c) {
        for (int r = c; r < n; ++r) {
            double s = a[static_cast<std::size_t>(r) * n + c];
            for (int k = 0; k < c; ++k)
                s -= a[static_cast<std::size_t>(r) * n + k] * a[static_cast<std::size_t>(c) * n + k];
            if (r == c) {
                if (s <= 0.0) return false;
                a[static_cast<std::size_t>(r) * n + c] = std::sqrt(s);
            } else {
                a[static_cast<std::size_t>(r) * n + c] = s / a[static_cast<std::size_t>(c) * n + c];
            }
        }
    }
    for (int r = 0; r < n; ++r) {
        double s = b[static_cast<std::size_t>(r)];
        for (int k = 0; k < r; ++k) s -= a[static_cast<std::size_t>(r) * n + k] * b[static_cast<std::size_t>(k)];
        b[static_cast<std::size_t>(r)] = s / a[static_cast<std::size_t>(r) * n + r];
    }
    x.assign(static_cast<std::size_t>(n), 0.0);
    for (int r = n - 1; r >= 0; --r) {
        double s = b[static_cast<std::size_t>(r)];
        for (int k = r + 1; k < n; ++k) s -= a[static_cast<std::size_t>(k) * n + r] * x[static_cast<std::size_t>(k)];
        x[static_cast<std::size_t>(r)] = s / a[static_cast<std::size_t>(r) * n + r];
    }
    return true;
}

// ---------------------------------------------------------------------------
// Ordinary least squares over an explicit design matrix.
// ---------------------------------------------------------------------------

struct OlsFit {
    std::vector<double> coef;
    double rss = 0.0;
    double tss = 0.0;
    double adjusted_r2 = 0.0;
    std::size_t n = 0;
    std::size_t p = 0;  // number of coefficients
};

// rows: one vector of regressors per observation (including the intercept 1).
inline OlsFit ols(const std::vector<std::vector<double>>& rows, const std::vector<double>& y) {
    const std::size_t n = rows.size();
    require(n > 0 && n == y.size(), ErrorCode::degenerate_design, "empty or mismatched design");
    const std::size_t p = rows[0].size();
    require(n > p, ErrorCode::degenerate_design, "more coefficients than observations");

    std::vector<double> xtx(p * p, 0.0), xty(p, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < p; ++a) {
            xty[a] += rows[i][a] * y[i];
            for (std::size_t b = 0; b <= a; ++b) xtx[a * p + b] += rows[i][a] * rows[i][b];
        }
    }
    for (std::size_t a = 0; a < p; ++a)
        for (std::size_t b = a + 1; b < p; ++b) xtx[a * p + b] = xtx[b * p + a];

    OlsFit fit;
    require(solve_spd(xtx, xty, static_cast<int>(p), fit.coef), ErrorCode::degenerate_design,
            "singular design matrix");
    fit.n = n;
    fit.p = p;

    double mean = 0.0;
    for (const double v : y) mean += v;
    mean /= double(n);
    for (std::size_t i = 0; i < n; ++i) {
        double pred = 0.0;
        for (std::size_t a = 0; a < p; ++a) pred += fit.coef[a] * rows[i][a];
        fit.rss += (y[i] - pred) * (y[i] - pred);
        fit.tss += (y[i] - mean) * (y[i] - mean);
    }
    require(fit.tss > 0.0, ErrorCode::degenerate_design, "constant response");
    const double r2 = 1.0 - fit.rss / fit.tss;
    fit.adjusted_r2 = 1.0 - (1.0 - r2) * double(n - 1) / double(n - p);
    return fit;
}

// ---------------------------------------------------------------------------
// Regularized incomplete beta and the F distribution tail.
// ---------------------------------------------------------------------------

namespace detail {

// Continued fraction for the incomplete beta (modified Lentz).
inline double beta_cf(double a, double b, double x) {
    const double tiny = 1e-300;
    double c = 1.0;
    double d = 1.0 - (a + b) * x / (a + 1.0);
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 300; ++m) {
        const double m2 = 2.0 * m;
        double num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 + num * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + num / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 + num * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + num / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-14) break;
    }
    return h;
}

}  // namespace detail

// I_x(a, b), the regularized incomplete beta function.
inline double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    if (x < (a + 1.0) / (a + b + 2.0)) return std::exp(ln_front) * detail::beta_cf(a, b, x) / a;
    return 1.0 - std::exp(std::lgamma(a + b) - std::lgamma(b) - std::lgamma(a) + b * std::log1p(-x) +
                          a * std::log(x)) *
                     detail::beta_cf(b, a, 1.0 - x) / b;
}

// P(F >= f) for an F(d1, d2) statistic.
inline double f_tail_probability(double f, double d1, double d2) {
    if (f <= 0.0) return 1.0;
    return incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f));
}

// ---------------------------------------------------------------------------
// Order statistics (type-7 quantiles, the spreadsheet/NumPy default).
// ---------------------------------------------------------------------------

inline double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return 0.0;
    const double pos = q * double(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - double(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

struct RegionSummary {
    double median = 0.0;
    double mean = 0.0;
    double iqr = 0.0;
    std::size_t count = 0;
};

inline RegionSummary summarize_values(std::vector<double> values) {
    require(!values.empty(), ErrorCode::empty_mask, "no values to summarize");
    RegionSummary s;
    s.count = values.size();
    for (const double v : values) s.mean += v;
    s.mean /= double(values.size());
    std::sort(values.begin(), values.end());
    s.median = quantile_sorted(values, 0.5);
    s.iqr = quantile_sorted(values, 0.75) - quantile_sorted(values, 0.25);
    return s;
}

}  // namespace abdmri
