#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sbicm/rng.hpp"
#include "sbicm/schedule.hpp"

using namespace sbicm;

namespace {

ConsistencySchedule sched(std::size_t s0, std::size_t s1, std::size_t total, double t_max = 10.0) {
    ConsistencySchedule s;
    s.s0 = s0;
    s.s1 = s1;
    s.total_iterations = total;
    s.t_max = t_max;
    return s;
}

// Independent scalar re-implementations, written directly from the design
// table, to cross-check the library versions.
std::size_t oracle_n_of_k(std::size_t k, std::size_t s0, std::size_t s1, std::size_t total) {
    const double kp = std::floor(static_cast<double>(total) / (std::log2(std::floor(double(s1) / double(s0))) + 1.0));
    const double grown = double(s0) * std::pow(2.0, std::floor(double(k) / kp));
    return static_cast<std::size_t>(std::min(grown, double(s1))) + 1;
}

double oracle_t_i(std::size_t i, std::size_t n, double eps, double t_max, double rho) {
    const double lo = std::pow(eps, 1.0 / rho);
    const double hi = std::pow(t_max, 1.0 / rho);
    return std::pow(lo + (double(i) - 1.0) / (double(n) - 1.0) * (hi - lo), rho);
}

}  // namespace

TEST_CASE("curriculum start, end and saturation", "[schedule]") {
    const auto s = sched(10, 50, 80000);
    REQUIRE(discretization_steps(0, s) == 11);
    REQUIRE(discretization_steps(79999, s) == 51);

    const auto flat = sched(25, 25, 1000);
    for (std::size_t k = 0; k < 1000; k += 37) REQUIRE(discretization_steps(k, flat) == 26);
}

TEST_CASE("curriculum is nondecreasing and matches the scalar oracle", "[schedule]") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t s0 = 2 + rng.index(20);
        const std::size_t s1 = s0 + rng.index(200);
        const std::size_t total = 50 + rng.index(5000);
        const auto s = sched(s0, s1, total);
        std::size_t prev = 0;
        for (std::size_t k = 0; k < total; k += 1 + total / 97) {
            const std::size_t n = discretization_steps(k, s);
            REQUIRE(n >= prev);
            REQUIRE(n <= s1 + 1);
            REQUIRE(n == oracle_n_of_k(k, s0, s1, total));
            prev = n;
        }
    }
}

TEST_CASE("time grid endpoints are exact and interior matches the oracle", "[schedule]") {
    const auto s = sched(10, 50, 100);
    for (std::size_t n : {2u, 5u, 11u, 51u}) {
        const auto grid = time_grid(n, s);
        REQUIRE(grid.front() == s.eps);
        REQUIRE(grid.back() == s.t_max);
        for (std::size_t i = 1; i + 1 < n; ++i) {
            REQUIRE(grid[i] == Catch::Approx(oracle_t_i(i + 1, n, s.eps, s.t_max, s.rho)).epsilon(1e-12));
        }
        for (std::size_t i = 0; i + 1 < n; ++i) REQUIRE(grid[i] < grid[i + 1]);
    }
}

TEST_CASE("rho = 1 gives a linear grid", "[schedule]") {
    ConsistencySchedule s;
    s.eps = 0.0;  // the formula itself is defined at eps = 0
    s.t_max = 1.0;
    s.rho = 1.0;
    const auto grid = time_grid(5, s);
    const double expected[5] = {0.0, 0.25, 0.5, 0.75, 1.0};
    for (std::size_t i = 0; i < 5; ++i) REQUIRE(grid[i] == Catch::Approx(expected[i]).margin(1e-15));
}

TEST_CASE("skip coefficients fulfill the boundary conditions", "[schedule]") {
    ConsistencySchedule s;
    s.sigma_data = 0.5;
    REQUIRE(c_skip(s.eps, s) == 1.0);
    REQUIRE(c_out(s.eps, s) == 0.0);
    // sigma = 0.5, t = eps + 0.5: c_skip = 0.25 / (0.25 + 0.25) = 0.5
    REQUIRE(c_skip(s.eps + 0.5, s) == Catch::Approx(0.5).epsilon(1e-12));
    const double t = s.eps + 0.5;
    REQUIRE(c_out(t, s) == Catch::Approx(0.5 * (t - s.eps) / std::sqrt(0.25 + t * t)).epsilon(1e-12));
}

TEST_CASE("pseudo huber basics", "[schedule]") {
    const std::vector<double> u{1.0, -2.0, 0.5};
    REQUIRE(pseudo_huber(u, u, 0.1) == 0.0);

    const std::vector<double> a{3.0, 0.0};
    const std::vector<double> b{0.0, 0.0};
    REQUIRE(pseudo_huber(a, b, 4.0) == Catch::Approx(1.0).epsilon(1e-14));  // sqrt(9+16)-4

    // c -> 0 limit approaches the euclidean norm
    const std::vector<double> p{0.3, -0.7, 1.1};
    const std::vector<double> q{-0.2, 0.4, 0.9};
    double norm = 0.0;
    for (std::size_t i = 0; i < 3; ++i) norm += (p[i] - q[i]) * (p[i] - q[i]);
    norm = std::sqrt(norm);
    REQUIRE(std::abs(pseudo_huber(p, q, 1e-12) - norm) < 1e-9);
}

TEST_CASE("noise weights are positive, normalized, and two-point grids are deterministic", "[schedule]") {
    const auto s = sched(10, 50, 100);
    const auto grid = time_grid(31, s);
    const auto w = noise_index_weights(grid, s);
    double total = 0.0;
    for (double x : w) {
        REQUIRE(x >= 0.0);
        total += x;
    }
    REQUIRE(total == Catch::Approx(1.0).epsilon(1e-12));

    const auto two = time_grid(2, s);
    Rng rng(41);
    for (int i = 0; i < 50; ++i) REQUIRE(sample_noise_index(two, s, rng) == 0);
}

TEST_CASE("empirical index frequencies match the erf weights", "[schedule]") {
    const auto s = sched(10, 50, 100);
    const auto grid = time_grid(12, s);
    const auto w = noise_index_weights(grid, s);
    const std::size_t n_draws = 1000000;
    std::vector<std::size_t> counts(w.size(), 0);
    Rng rng(43);
    for (std::size_t i = 0; i < n_draws; ++i) ++counts[sample_noise_index(grid, s, rng)];
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double expected = w[i] * n_draws;
        const double sd = std::sqrt(w[i] * (1.0 - w[i]) * n_draws);
        REQUIRE(std::abs(counts[i] - expected) <= 4.0 * sd + 1.0);
    }
}

TEST_CASE("invalid schedules are rejected", "[schedule]") {
    ConsistencySchedule s;
    s.eps = 2.0;
    s.t_max = 1.0;
    REQUIRE_THROWS_AS(s.validate(), ConfigError);
    s = ConsistencySchedule{};
    s.s0 = 60;
    s.s1 = 50;
    REQUIRE_THROWS_AS(s.validate(), ConfigError);
}
