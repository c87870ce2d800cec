#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sbicm/errors.hpp"
#include "sbicm/matrix.hpp"
#include "sbicm/rng.hpp"
#include "sbicm/simulators.hpp"
#include "sbicm/threads.hpp"

namespace sbicm {

struct ReferenceSettings {
    std::size_t gmm_grid_n = 401;     // odd, so the grid contains 0 and is negation-symmetric
    double gmm_box = 4.0;             // grid covers [-box, box]^2
    std::size_t tm_grid_n = 1201;     // two moons grid over the prior box [-1, 1]^2
    bool tm_use_abc = false;          // analytic inversion by default
    double tm_abc_eps = 1e-3;
    double ik_abc_eps = 0.002;
    std::size_t max_proposals = 1ull << 36;
};

namespace detail {

// Symmetric lattice: coord[n-1-i] is exactly -coord[i], middle point exactly 0.
inline std::vector<double> symmetric_grid(double half_width, std::size_t n) {
    std::vector<double> coords(n);
    const double h = 2.0 * half_width / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n / 2; ++i) {
        coords[i] = -half_width + static_cast<double>(i) * h;
        coords[n - 1 - i] = -coords[i];
    }
    if (n % 2 == 1) coords[n / 2] = 0.0;
    return coords;
}

inline double log_sum_exp(double a, double b) {
    const double m = a > b ? a : b;
    if (m == -std::numeric_limits<double>::infinity()) return m;
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Resample n_draws cells proportional to exp(log_weights), jittering each
// draw uniformly inside its cell (piecewise-constant density approximation).
inline Matrix grid_resample_2d(const std::vector<double>& xs, const std::vector<double>& ys,
                               const std::vector<double>& log_weights, std::size_t n_draws, Rng& rng) {
    double max_lw = -std::numeric_limits<double>::infinity();
    for (double lw : log_weights) max_lw = std::max(max_lw, lw);
    if (!std::isfinite(max_lw)) throw DomainError("grid_resample_2d: all grid weights vanished");

    std::vector<double> cdf(log_weights.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < log_weights.size(); ++i) {
        acc += std::exp(log_weights[i] - max_lw);
        cdf[i] = acc;
    }
    const double total = acc;
    const double hx = xs[1] - xs[0], hy = ys[1] - ys[0];

    Matrix draws(n_draws, 2);
    for (std::size_t j = 0; j < n_draws; ++j) {
        const double u = rng.uniform() * total;
        std::size_t lo = 0, hi = cdf.size() - 1;
        while (lo < hi) {
            const std::size_t mid = (lo + hi) / 2;
            if (cdf[mid] < u) {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        const std::size_t ix = lo / ys.size(), iy = lo % ys.size();
        draws(j, 0) = xs[ix] + (rng.uniform() - 0.5) * hx;
        draws(j, 1) = ys[iy] + (rng.uniform() - 0.5) * hy;
    }
    return draws;
}

}  // namespace detail

// log of the unnormalized GMM posterior: N(theta; 0, I) prior times the
// product over rows of the symmetric two-component likelihood with
// covariance I/2 per component.
inline double gmm_log_unnorm_posterior(double t0, double t1, const Matrix& x_obs) {
    double lp = -0.5 * (t0 * t0 + t1 * t1);
    for (std::size_t n = 0; n < x_obs.rows; ++n) {
        const double dx0 = x_obs(n, 0) - t0, dx1 = x_obs(n, 1) - t1;
        const double sx0 = x_obs(n, 0) + t0, sx1 = x_obs(n, 1) + t1;
        const double la = -(dx0 * dx0 + dx1 * dx1);
        const double lb = -(sx0 * sx0 + sx1 * sx1);
        lp += detail::log_sum_exp(la, lb) - std::log(2.0);
    }
    return lp;
}

// Dense grid of the (normalizable) GMM posterior over [-box, box]^2.
// Exactly point-symmetric: grid coordinates negate onto themselves and both
// mixture terms are evaluated at each point.
inline std::vector<double> gmm_grid_log_density(const Matrix& x_obs, const std::vector<double>& coords) {
    const std::size_t n = coords.size();
    std::vector<double> log_w(n * n);
    parallel_for(n, 8, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            for (std::size_t j = 0; j < n; ++j) log_w[i * n + j] = gmm_log_unnorm_posterior(coords[i], coords[j], x_obs);
        }
    });
    return log_w;
}

// Exact two moons likelihood for one observed 2-vector: inverts the forward
// map analytically. u = x - shift(theta) - (0.25, 0) must look like the
// polar noise (r cos a, r sin a) with a ~ U(-pi/2, pi/2), r ~ N(0.1, 0.01^2).
inline double two_moons_log_likelihood(double t0, double t1, double x0, double x1) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    const double u0 = x0 + std::abs(t0 + t1) * inv_sqrt2 - 0.25;
    const double u1 = x1 - (-t0 + t1) * inv_sqrt2;
    const double radius = std::sqrt(u0 * u0 + u1 * u1);
    if (radius < 1e-14) return -std::numeric_limits<double>::infinity();
    const double r_signed = u0 >= 0.0 ? radius : -radius;
    const double zr = (r_signed - 0.1) / 0.01;
    const double log_norm = -std::log(0.01) - 0.5 * std::log(2.0 * 3.14159265358979323846);
    return log_norm - 0.5 * zr * zr - std::log(3.14159265358979323846 * radius);
}

inline std::vector<double> two_moons_grid_log_density(const Matrix& x_obs, const std::vector<double>& coords) {
    const std::size_t n = coords.size();
    std::vector<double> log_w(n * n);
    const double x0 = x_obs(0, 0), x1 = x_obs(0, 1);
    parallel_for(n, 32, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            for (std::size_t j = 0; j < n; ++j) log_w[i * n + j] = two_moons_log_likelihood(coords[i], coords[j], x0, x1);
        }
    });
    return log_w;
}

struct AbcResult {
    Matrix draws;
    std::vector<double> discrepancies;
    std::size_t n_proposals = 0;
};

// Rejection ABC: propose from the prior, simulate, accept when the Euclidean
// distance to x_obs is within eps. Proposals run in deterministic sharded
// rounds so the result is reproducible under any worker count.
inline AbcResult abc_rejection(const std::function<std::vector<double>(Rng&)>& propose_and_simulate,
                               std::span<const double> x_obs_flat, std::size_t theta_dim, double eps,
                               std::size_t n_draws, std::uint64_t seed, std::size_t max_proposals = 1ull << 36) {
    constexpr std::size_t n_shards = 16;
    const std::size_t round_size = 1u << 15;  // proposals per shard per round

    struct Accepted {
        std::vector<double> theta_and_dist;  // theta_dim + 1 packed
    };

    AbcResult result;
    result.draws = Matrix(0, theta_dim);
    std::vector<double> flat;  // accepted thetas packed row-major
    std::size_t proposals = 0;
    std::uint64_t round = 0;

    std::vector<std::vector<double>> shard_hits(n_shards);
    std::vector<Rng> shard_rngs;
    for (std::size_t s = 0; s < n_shards; ++s) shard_rngs.push_back(Rng::from(seed, s));

    while (flat.size() / (theta_dim + 1) < n_draws) {
        if (proposals >= max_proposals) {
            throw BudgetExceededError("abc_rejection: proposal budget exhausted; consider a larger tolerance");
        }
        parallel_for(n_shards, 1, [&](std::size_t s0, std::size_t s1) {
            for (std::size_t s = s0; s < s1; ++s) {
                shard_hits[s].clear();
                Rng& rng = shard_rngs[s];
                for (std::size_t p = 0; p < round_size; ++p) {
                    const std::vector<double> sim = propose_and_simulate(rng);
                    // layout: theta_dim values then the simulated observation
                    double sq = 0.0;
                    for (std::size_t j = 0; j < x_obs_flat.size(); ++j) {
                        const double diff = sim[theta_dim + j] - x_obs_flat[j];
                        sq += diff * diff;
                    }
                    const double dist = std::sqrt(sq);
                    if (dist <= eps) {
                        for (std::size_t j = 0; j < theta_dim; ++j) shard_hits[s].push_back(sim[j]);
                        shard_hits[s].push_back(dist);
                    }
                }
            }
        });
        for (std::size_t s = 0; s < n_shards; ++s) flat.insert(flat.end(), shard_hits[s].begin(), shard_hits[s].end());
        proposals += n_shards * round_size;
        ++round;

        const double accepted = static_cast<double>(flat.size() / (theta_dim + 1));
        if (proposals >= (1u << 24) && accepted / static_cast<double>(proposals) < 1e-7) {
            throw BudgetExceededError("abc_rejection: acceptance rate below 1e-7; consider a larger tolerance");
        }
    }

    result.draws = Matrix(n_draws, theta_dim);
    result.discrepancies.resize(n_draws);
    for (std::size_t i = 0; i < n_draws; ++i) {
        for (std::size_t j = 0; j < theta_dim; ++j) result.draws(i, j) = flat[i * (theta_dim + 1) + j];
        result.discrepancies[i] = flat[i * (theta_dim + 1) + theta_dim];
    }
    result.n_proposals = proposals;
    return result;
}

inline std::vector<double> abc_propose_two_moons(Rng& rng) {
    const SimulationRecord rec = two_moons_simulate(rng);
    return {rec.theta[0], rec.theta[1], rec.x.values(0, 0), rec.x.values(0, 1)};
}

inline std::vector<double> abc_propose_ik(Rng& rng) {
    const std::vector<double> theta = ik_prior_sample(rng);
    const auto end = ik_forward(theta);
    return {theta[0], theta[1], theta[2], theta[3], end[0], end[1]};
}

// Reference posterior draws for one observed data set.
//   gmm                — self-normalized importance resampling on a dense grid
//   two_moons          — analytic likelihood on a grid (or rejection ABC)
//   inverse_kinematics — rejection ABC on || g(theta) - x_obs ||
inline Matrix reference_posterior(Task task, const ObservationSet& x_obs, std::size_t n_draws, Rng& rng,
                                  const ReferenceSettings& settings = {}) {
    switch (task) {
        case Task::gmm: {
            const auto coords = detail::symmetric_grid(settings.gmm_box, settings.gmm_grid_n);
            const auto log_w = gmm_grid_log_density(x_obs.values, coords);
            return detail::grid_resample_2d(coords, coords, log_w, n_draws, rng);
        }
        case Task::two_moons: {
            if (settings.tm_use_abc) {
                const std::uint64_t seed = rng.next_u64();
                return abc_rejection(abc_propose_two_moons, std::span<const double>(x_obs.values.values), 2,
                                     settings.tm_abc_eps, n_draws, seed, settings.max_proposals)
                    .draws;
            }
            const auto coords = detail::symmetric_grid(1.0, settings.tm_grid_n);
            const auto log_w = two_moons_grid_log_density(x_obs.values, coords);
            return detail::grid_resample_2d(coords, coords, log_w, n_draws, rng);
        }
        case Task::inverse_kinematics: {
            const std::uint64_t seed = rng.next_u64();
            return abc_rejection(abc_propose_ik, std::span<const double>(x_obs.values.values), 4, settings.ik_abc_eps,
                                 n_draws, seed, settings.max_proposals)
                .draws;
        }
    }
    throw InternalError("reference_posterior: unknown task");
}

}  // namespace sbicm
