#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "sbicm/errors.hpp"

namespace sbicm {

inline double mean(std::span<const double> xs) {
    if (xs.empty()) throw DomainError("mean: empty input");
    double acc = 0.0;
    for (double x : xs) acc += x;
    return acc / static_cast<double>(xs.size());
}

inline double sample_sd(std::span<const double> xs) {
    if (xs.size() < 2) throw DomainError("sample_sd: need at least two values");
    const double m = mean(xs);
    double acc = 0.0;
    for (double x : xs) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

inline double standard_error(std::span<const double> xs) {
    return sample_sd(xs) / std::sqrt(static_cast<double>(xs.size()));
}

// Empirical quantile of an ascending-sorted vector, linear interpolation
// between order statistics.
inline double quantile_sorted(const std::vector<double>& xs, double q) {
    if (xs.empty()) throw DomainError("quantile: empty input");
    if (!(q >= 0.0 && q <= 1.0)) throw DomainError("quantile: q out of [0,1]");
    const double pos = q * static_cast<double>(xs.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= xs.size()) return xs.back();
    const double frac = pos - static_cast<double>(lo);
    return xs[lo] + frac * (xs[lo + 1] - xs[lo]);
}

inline double quantile(std::vector<double> xs, double q) {
    std::sort(xs.begin(), xs.end());
    return quantile_sorted(xs, q);
}

inline double median(std::vector<double> xs) { return quantile(std::move(xs), 0.5); }

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
};

inline LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw DomainError("linear_fit: need matching inputs of length >= 2");
    const double mx = mean(x), my = mean(y);
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    LinearFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.r_squared = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
    return fit;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// One-sample Kolmogorov-Smirnov statistic against a supplied CDF.
template <typename Cdf>
double ks_statistic(std::vector<double> xs, Cdf cdf) {
    if (xs.empty()) throw DomainError("ks_statistic: empty sample");
    std::sort(xs.begin(), xs.end());
    const double n = static_cast<double>(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double f = cdf(xs[i]);
        d = std::max(d, std::abs(f - static_cast<double>(i) / n));
        d = std::max(d, std::abs(static_cast<double>(i + 1) / n - f));
    }
    return d;
}

// Asymptotic critical value for the one-sample KS test.
inline double ks_critical_value(std::size_t n, double alpha) {
    const double c = std::sqrt(-0.5 * std::log(alpha / 2.0));
    return c / std::sqrt(static_cast<double>(n));
}

}  // namespace sbicm
