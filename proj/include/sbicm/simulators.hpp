#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sbicm/deepset.hpp"
#include "sbicm/errors.hpp"
#include "sbicm/matrix.hpp"
#include "sbicm/rng.hpp"
#include "sbicm/standardize.hpp"

namespace sbicm {

enum class Task { gmm, two_moons, inverse_kinematics };

struct TaskInfo {
    std::size_t theta_dim;
    std::size_t n_obs;
    std::size_t obs_dim;
};

inline TaskInfo task_info(Task task) {
    switch (task) {
        case Task::gmm: return {2, 10, 2};
        case Task::two_moons: return {2, 1, 2};
        case Task::inverse_kinematics: return {4, 1, 2};
    }
    throw InternalError("task_info: unknown task");
}

inline std::string to_string(Task task) {
    switch (task) {
        case Task::gmm: return "gmm";
        case Task::two_moons: return "two_moons";
        case Task::inverse_kinematics: return "inverse_kinematics";
    }
    throw InternalError("to_string: unknown task");
}

inline Task task_from_string(const std::string& s) {
    if (s == "gmm") return Task::gmm;
    if (s == "two_moons") return Task::two_moons;
    if (s == "inverse_kinematics") return Task::inverse_kinematics;
    throw ConfigError("unknown task: " + s);
}

struct SimulationRecord {
    std::vector<double> theta;
    ObservationSet x;
};

// theta ~ N(0, I_2); each of 10 rows from (1/2) N(theta, I/2) + (1/2) N(-theta, I/2).
inline SimulationRecord gmm_simulate(Rng& rng) {
    SimulationRecord rec;
    rec.theta = {rng.normal(), rng.normal()};
    rec.x.values = Matrix(10, 2);
    const double noise_sd = std::sqrt(0.5);
    for (std::size_t n = 0; n < 10; ++n) {
        const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
        rec.x.values(n, 0) = sign * rec.theta[0] + noise_sd * rng.normal();
        rec.x.values(n, 1) = sign * rec.theta[1] + noise_sd * rng.normal();
    }
    return rec;
}

// Deterministic part of the two moons map given the crescent noise (a, r):
// p = (r cos a + 0.25, r sin a); x = p + (-|t1+t2|/sqrt2, (-t1+t2)/sqrt2).
inline std::array<double, 2> two_moons_forward(std::span<const double> theta, double a, double r) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    return {r * std::cos(a) + 0.25 - std::abs(theta[0] + theta[1]) * inv_sqrt2,
            r * std::sin(a) + (-theta[0] + theta[1]) * inv_sqrt2};
}

// theta ~ U(-1,1)^2; a ~ U(-pi/2, pi/2); r ~ N(0.1, 0.01^2).
inline SimulationRecord two_moons_simulate(Rng& rng) {
    constexpr double half_pi = 1.57079632679489661923;
    SimulationRecord rec;
    rec.theta = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    const double a = rng.uniform(-half_pi, half_pi);
    const double r = rng.normal(0.1, 0.01);
    const auto x = two_moons_forward(rec.theta, a, r);
    rec.x.values = Matrix(1, 2);
    rec.x.values(0, 0) = x[0];
    rec.x.values(0, 1) = x[1];
    return rec;
}

// Deterministic kinematic chain: base height theta_1, joint angles
// theta_2..theta_4 accumulated along segments of length 0.5, 0.5, 1.0.
inline std::array<double, 2> ik_forward(std::span<const double> theta) {
    if (theta.size() != 4) throw DimensionError("ik_forward: theta must have dimension 4");
    constexpr double lengths[3] = {0.5, 0.5, 1.0};
    double angle = 0.0, x = 0.0, y = theta[0];
    for (std::size_t i = 0; i < 3; ++i) {
        angle += theta[i + 1];
        x += lengths[i] * std::cos(angle);
        y += lengths[i] * std::sin(angle);
    }
    return {x, y};
}

// theta ~ N(0, diag(1/16, 1/4, 1/4, 1/4))
inline std::vector<double> ik_prior_sample(Rng& rng) {
    return {0.25 * rng.normal(), 0.5 * rng.normal(), 0.5 * rng.normal(), 0.5 * rng.normal()};
}

inline SimulationRecord ik_simulate(Rng& rng) {
    SimulationRecord rec;
    rec.theta = ik_prior_sample(rng);
    const auto end = ik_forward(rec.theta);
    rec.x.values = Matrix(1, 2);
    rec.x.values(0, 0) = end[0];
    rec.x.values(0, 1) = end[1];
    return rec;
}

inline SimulationRecord simulate_record(Task task, Rng& rng) {
    switch (task) {
        case Task::gmm: return gmm_simulate(rng);
        case Task::two_moons: return two_moons_simulate(rng);
        case Task::inverse_kinematics: return ik_simulate(rng);
    }
    throw InternalError("simulate_record: unknown task");
}

struct TrainingSet {
    Task task = Task::two_moons;
    std::size_t budget = 0;
    std::uint64_t seed = 0;
    std::vector<SimulationRecord> records;
    Standardization stats;
};

namespace detail {

inline Standardization compute_standardization(Task task, const std::vector<SimulationRecord>& records) {
    const TaskInfo info = task_info(task);
    Standardization s;
    s.theta_mean.assign(info.theta_dim, 0.0);
    s.theta_std.assign(info.theta_dim, 0.0);
    s.x_mean.assign(info.obs_dim, 0.0);
    s.x_std.assign(info.obs_dim, 0.0);

    const double m = static_cast<double>(records.size());
    for (const auto& rec : records) {
        for (std::size_t d = 0; d < info.theta_dim; ++d) s.theta_mean[d] += rec.theta[d];
        for (std::size_t r = 0; r < info.n_obs; ++r) {
            for (std::size_t j = 0; j < info.obs_dim; ++j) s.x_mean[j] += rec.x.values(r, j);
        }
    }
    for (double& v : s.theta_mean) v /= m;
    for (double& v : s.x_mean) v /= m * static_cast<double>(info.n_obs);

    for (const auto& rec : records) {
        for (std::size_t d = 0; d < info.theta_dim; ++d) {
            const double c = rec.theta[d] - s.theta_mean[d];
            s.theta_std[d] += c * c;
        }
        for (std::size_t r = 0; r < info.n_obs; ++r) {
            for (std::size_t j = 0; j < info.obs_dim; ++j) {
                const double c = rec.x.values(r, j) - s.x_mean[j];
                s.x_std[j] += c * c;
            }
        }
    }
    for (double& v : s.theta_std) v = std::sqrt(v / m);
    for (double& v : s.x_std) v = std::sqrt(v / (m * static_cast<double>(info.n_obs)));
    for (double& v : s.theta_std) {
        if (v < 1e-12) v = 1.0;  // degenerate coordinate
    }
    for (double& v : s.x_std) {
        if (v < 1e-12) v = 1.0;
    }
    return s;
}

}  // namespace detail

// Record m is drawn from its own substream, so the set is reproducible
// bit-for-bit from (task, M, seed) and generation may shard freely.
inline TrainingSet generate_training_set(Task task, std::size_t budget, std::uint64_t seed) {
    if (budget == 0) throw ConfigError("generate_training_set: budget must be positive");
    TrainingSet set;
    set.task = task;
    set.budget = budget;
    set.seed = seed;
    set.records.reserve(budget);
    for (std::size_t m = 0; m < budget; ++m) {
        Rng rec_rng = Rng::from(seed, m);
        set.records.push_back(simulate_record(task, rec_rng));
    }
    set.stats = detail::compute_standardization(task, set.records);
    return set;
}

}  // namespace sbicm
