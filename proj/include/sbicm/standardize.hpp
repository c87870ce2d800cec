#pragma once

#include <cmath>
#include <vector>

#include "sbicm/errors.hpp"
#include "sbicm/matrix.hpp"

namespace sbicm {

// Per-coordinate z-scoring statistics for theta and for observation rows.
// x statistics are per observation column, pooled over every row of every
// set, so row order inside a set never matters.
struct Standardization {
    std::vector<double> theta_mean, theta_std;
    std::vector<double> x_mean, x_std;

    static Standardization identity(std::size_t theta_dim, std::size_t obs_dim) {
        Standardization s;
        s.theta_mean.assign(theta_dim, 0.0);
        s.theta_std.assign(theta_dim, 1.0);
        s.x_mean.assign(obs_dim, 0.0);
        s.x_std.assign(obs_dim, 1.0);
        return s;
    }

    // Sum of log sigma over theta coordinates; the log-Jacobian of
    // de-standardization, needed by density evaluation.
    double theta_log_jacobian() const {
        double acc = 0.0;
        for (double s : theta_std) acc += std::log(s);
        return acc;
    }
};

namespace detail {

inline void standardize_rows(Matrix& m, const std::vector<double>& mu, const std::vector<double>& sigma) {
    if (m.cols != mu.size()) throw DimensionError("standardize: column count mismatch");
    for (std::size_t i = 0; i < m.rows; ++i) {
        double* r = m.row(i);
        for (std::size_t j = 0; j < m.cols; ++j) r[j] = (r[j] - mu[j]) / sigma[j];
    }
}

inline void destandardize_rows(Matrix& m, const std::vector<double>& mu, const std::vector<double>& sigma) {
    if (m.cols != mu.size()) throw DimensionError("destandardize: column count mismatch");
    for (std::size_t i = 0; i < m.rows; ++i) {
        double* r = m.row(i);
        for (std::size_t j = 0; j < m.cols; ++j) r[j] = mu[j] + sigma[j] * r[j];
    }
}

}  // namespace detail

inline Matrix standardize_theta(Matrix thetas, const Standardization& s) {
    detail::standardize_rows(thetas, s.theta_mean, s.theta_std);
    return thetas;
}

inline Matrix destandardize_theta(Matrix thetas, const Standardization& s) {
    detail::destandardize_rows(thetas, s.theta_mean, s.theta_std);
    return thetas;
}

inline Matrix standardize_obs(Matrix rows, const Standardization& s) {
    detail::standardize_rows(rows, s.x_mean, s.x_std);
    return rows;
}

}  // namespace sbicm
