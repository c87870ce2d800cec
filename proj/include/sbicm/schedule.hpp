#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sbicm/errors.hpp"
#include "sbicm/rng.hpp"

namespace sbicm {

// All constants of the consistency-training recipe.
struct ConsistencySchedule {
    double eps = 1e-3;
    double t_max = 10.0;
    double rho = 7.0;
    std::size_t s0 = 10;
    std::size_t s1 = 50;
    std::size_t total_iterations = 1;  // K
    double p_mean = -1.1;
    double p_std = 2.0;
    double sigma_data = 1.0;
    double huber_c = 1e-3;

    void validate() const {
        if (!(eps > 0.0 && eps < t_max)) throw ConfigError("ConsistencySchedule: need 0 < eps < t_max");
        if (s0 == 0 || s0 > s1) throw ConfigError("ConsistencySchedule: need 1 <= s0 <= s1");
        if (rho < 1.0) throw ConfigError("ConsistencySchedule: need rho >= 1");
        if (huber_c <= 0.0) throw ConfigError("ConsistencySchedule: need huber_c > 0");
        if (total_iterations == 0) throw ConfigError("ConsistencySchedule: need total_iterations > 0");
        if (p_std <= 0.0) throw ConfigError("ConsistencySchedule: need p_std > 0");
        if (sigma_data <= 0.0) throw ConfigError("ConsistencySchedule: need sigma_data > 0");
    }
};

// Recommended Pseudo-Huber constant for a theta of dimension d.
inline double default_huber_c(std::size_t theta_dim) { return 0.00054 * std::sqrt(static_cast<double>(theta_dim)); }

// Discretization curriculum: N(k) = min(s0 * 2^floor(k/K'), s1) + 1 with
// K' = floor(K / (log2(floor(s1/s0)) + 1)).
inline std::size_t discretization_steps(std::size_t k, const ConsistencySchedule& sched) {
    if (k >= sched.total_iterations) throw DomainError("discretization_steps: k out of range");
    const double ratio = static_cast<double>(sched.s1 / sched.s0);  // floor(s1/s0)
    const std::size_t k_prime =
        static_cast<std::size_t>(static_cast<double>(sched.total_iterations) / (std::log2(ratio) + 1.0));
    const std::size_t doublings = k_prime == 0 ? 63 : k / k_prime;  // K' == 0: curriculum saturates immediately
    std::size_t n = sched.s1;
    if (doublings < 63) {
        const std::uint64_t grown = static_cast<std::uint64_t>(sched.s0) << doublings;
        n = grown < sched.s1 ? static_cast<std::size_t>(grown) : sched.s1;
    }
    return n + 1;
}

// rho-spaced grid t_1..t_n with t_1 = eps and t_n = t_max pinned exactly.
inline std::vector<double> time_grid(std::size_t n, const ConsistencySchedule& sched) {
    if (n < 2) throw DomainError("time_grid: need at least two points");
    std::vector<double> grid(n);
    const double inv_rho = 1.0 / sched.rho;
    const double lo = std::pow(sched.eps, inv_rho);
    const double hi = std::pow(sched.t_max, inv_rho);
    grid.front() = sched.eps;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double frac = static_cast<double>(i) / static_cast<double>(n - 1);
        grid[i] = std::pow(lo + frac * (hi - lo), sched.rho);
    }
    grid.back() = sched.t_max;
    return grid;
}

// Skip-connection coefficients; c_skip(eps) = 1 and c_out(eps) = 0 exactly.
inline double c_skip(double t, const ConsistencySchedule& sched) {
    const double s2 = sched.sigma_data * sched.sigma_data;
    const double dt = t - sched.eps;
    return s2 / (dt * dt + s2);
}

inline double c_out(double t, const ConsistencySchedule& sched) {
    const double s2 = sched.sigma_data * sched.sigma_data;
    return sched.sigma_data * (t - sched.eps) / std::sqrt(s2 + t * t);
}

// d(u, v) = sqrt(||u - v||^2 + c^2) - c
inline double pseudo_huber(std::span<const double> u, std::span<const double> v, double c) {
    if (u.size() != v.size()) throw DimensionError("pseudo_huber: length mismatch");
    double sq = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double d = u[i] - v[i];
        sq += d * d;
    }
    return std::sqrt(sq + c * c) - c;
}

// p(i) ~ erf((log t_{i+1} - P_mean)/(sqrt(2) P_std)) - erf((log t_i - ...)),
// normalized over the n-1 adjacent index pairs. Natural logarithms.
inline std::vector<double> noise_index_weights(const std::vector<double>& grid, const ConsistencySchedule& sched) {
    if (grid.size() < 2) throw DomainError("noise_index_weights: need at least two grid points");
    const double denom = std::sqrt(2.0) * sched.p_std;
    std::vector<double> w(grid.size() - 1);
    double total = 0.0;
    double prev = std::erf((std::log(grid[0]) - sched.p_mean) / denom);
    for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
        const double next = std::erf((std::log(grid[i + 1]) - sched.p_mean) / denom);
        w[i] = next - prev;
        prev = next;
        total += w[i];
    }
    if (!(total > 0.0)) throw DomainError("noise_index_weights: all weights underflowed to zero");
    for (double& x : w) x /= total;
    return w;
}

// Draws a 0-based index i in [0, n-2]; the pair (t_i, t_{i+1}) is the
// teacher/student time pair.
inline std::size_t sample_noise_index(const std::vector<double>& grid, const ConsistencySchedule& sched, Rng& rng) {
    const std::vector<double> w = noise_index_weights(grid, sched);
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        acc += w[i];
        if (u < acc) return i;
    }
    return w.size() - 1;
}

}  // namespace sbicm
