#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sbicm/dataset_io.hpp"
#include "sbicm/simulators.hpp"
#include "sbicm/stats.hpp"

using namespace sbicm;

TEST_CASE("gmm rows at theta = 0 collapse to a single gaussian", "[simulators]") {
    // both mixture components coincide; each row ~ N(0, I/2) regardless of
    // the mixture sign
    Rng rng(51);
    const std::size_t n = 100000;
    std::vector<double> coord0;
    coord0.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
        coord0.push_back(sign * 0.0 + std::sqrt(0.5) * rng.normal());
    }
    REQUIRE(std::abs(mean(coord0)) < 3.0 * std::sqrt(0.5 / n));
    REQUIRE(sample_sd(coord0) == Catch::Approx(std::sqrt(0.5)).epsilon(0.02));
}

TEST_CASE("gmm empirical row mean at fixed theta is near zero", "[simulators]") {
    // the mixture is point-symmetric, so rows average to zero
    const std::size_t n_records = 10000;  // 10 rows each -> 1e5 rows
    double sum0 = 0.0, sum1 = 0.0;
    std::size_t n_rows = 0;
    double theta_norm_sq = 0.0;
    for (std::size_t m = 0; m < n_records; ++m) {
        Rng rng = Rng::from(99, m);
        const SimulationRecord rec = gmm_simulate(rng);
        theta_norm_sq += rec.theta[0] * rec.theta[0] + rec.theta[1] * rec.theta[1];
        for (std::size_t r = 0; r < rec.x.n_obs(); ++r) {
            sum0 += rec.x.values(r, 0);
            sum1 += rec.x.values(r, 1);
            ++n_rows;
        }
    }
    // per-row variance is bounded by E var = 0.5 + E theta^2 = 1.5
    const double sd_bound = 3.0 * std::sqrt(1.5 / static_cast<double>(n_rows));
    REQUIRE(std::abs(sum0 / n_rows) < sd_bound);
    REQUIRE(std::abs(sum1 / n_rows) < sd_bound);
}

TEST_CASE("gmm row variance matches the law of total variance", "[simulators]") {
    // at theta = (1, 0): var of coordinate 0 is 0.5 + 1.0 = 1.5
    const std::size_t n = 200000;
    Rng rng(52);
    std::vector<double> xs;
    xs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
        xs.push_back(sign * 1.0 + std::sqrt(0.5) * rng.normal());
    }
    const double sd = sample_sd(xs);
    REQUIRE(sd * sd == Catch::Approx(1.5).epsilon(0.02));
}

TEST_CASE("two moons forward map substitution", "[simulators]") {
    const std::vector<double> origin{0.0, 0.0};
    const auto x = two_moons_forward(origin, 0.0, 0.1);
    REQUIRE(x[0] == Catch::Approx(0.35).margin(1e-15));
    REQUIRE(x[1] == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("two moons x2 cancels for theta = (c, c)", "[simulators]") {
    Rng rng(53);
    for (int i = 0; i < 100; ++i) {
        const double c = rng.uniform(-1.0, 1.0);
        const double a = rng.uniform(-1.5, 1.5);
        const double r = rng.normal(0.1, 0.01);
        const std::vector<double> theta{c, c};
        const auto x = two_moons_forward(theta, a, r);
        REQUIRE(x[1] == r * std::sin(a));  // exact cancellation
    }
}

TEST_CASE("ik forward map on canonical configurations", "[simulators]") {
    const std::vector<double> straight{0.0, 0.0, 0.0, 0.0};
    auto x = ik_forward(straight);
    REQUIRE(x[0] == Catch::Approx(2.0).margin(1e-15));
    REQUIRE(x[1] == Catch::Approx(0.0).margin(1e-15));

    const std::vector<double> raised{0.37, 0.0, 0.0, 0.0};
    x = ik_forward(raised);
    REQUIRE(x[0] == Catch::Approx(2.0).margin(1e-15));
    REQUIRE(x[1] == Catch::Approx(0.37).margin(1e-15));

    const std::vector<double> up{0.0, 1.57079632679489661923, 0.0, 0.0};
    x = ik_forward(up);
    REQUIRE(x[0] == Catch::Approx(0.0).margin(1e-9));
    REQUIRE(x[1] == Catch::Approx(2.0).margin(1e-9));
}

TEST_CASE("ik forward is deterministic", "[simulators]") {
    const std::vector<double> theta{0.1, -0.4, 0.9, 0.2};
    const auto a = ik_forward(theta);
    const auto b = ik_forward(theta);
    REQUIRE(a[0] == b[0]);
    REQUIRE(a[1] == b[1]);
}

TEST_CASE("ik prior moments", "[simulators]") {
    const std::size_t n = 1000000;
    std::vector<std::vector<double>> cols(4, std::vector<double>());
    for (auto& c : cols) c.reserve(n);
    Rng rng(54);
    for (std::size_t i = 0; i < n; ++i) {
        const auto theta = ik_prior_sample(rng);
        for (std::size_t d = 0; d < 4; ++d) cols[d].push_back(theta[d]);
    }
    const double expected_var[4] = {0.0625, 0.25, 0.25, 0.25};
    for (std::size_t d = 0; d < 4; ++d) {
        REQUIRE(std::abs(mean(cols[d])) < 0.002);
        const double sd = sample_sd(cols[d]);
        REQUIRE(sd * sd == Catch::Approx(expected_var[d]).epsilon(0.01));
    }
    // coordinates uncorrelated
    for (std::size_t a = 0; a < 4; ++a) {
        for (std::size_t b = a + 1; b < 4; ++b) {
            double cov = 0.0;
            const double ma = mean(cols[a]), mb = mean(cols[b]);
            for (std::size_t i = 0; i < n; ++i) cov += (cols[a][i] - ma) * (cols[b][i] - mb);
            cov /= static_cast<double>(n);
            REQUIRE(std::abs(cov) < 0.01 * std::sqrt(expected_var[a] * expected_var[b]) * 4.0);
        }
    }
}

TEST_CASE("training sets are reproducible byte for byte", "[simulators]") {
    const TrainingSet a = generate_training_set(Task::two_moons, 512, 17);
    const TrainingSet b = generate_training_set(Task::two_moons, 512, 17);
    REQUIRE(a.records.size() == 512);

    Matrix ra(a.records.size(), 4), rb(b.records.size(), 4);
    for (std::size_t m = 0; m < a.records.size(); ++m) {
        ra(m, 0) = a.records[m].theta[0];
        ra(m, 1) = a.records[m].theta[1];
        ra(m, 2) = a.records[m].x.values(0, 0);
        ra(m, 3) = a.records[m].x.values(0, 1);
        rb(m, 0) = b.records[m].theta[0];
        rb(m, 1) = b.records[m].theta[1];
        rb(m, 2) = b.records[m].x.values(0, 0);
        rb(m, 3) = b.records[m].x.values(0, 1);
    }
    REQUIRE(ra.values == rb.values);
    REQUIRE(csv_to_string({"a", "b", "c", "d"}, ra) == csv_to_string({"a", "b", "c", "d"}, rb));

    const TrainingSet c = generate_training_set(Task::two_moons, 512, 18);
    REQUIRE(c.records[0].theta != a.records[0].theta);
}

TEST_CASE("gmm training-set theta standardization approaches the unit prior", "[simulators]") {
    const TrainingSet set = generate_training_set(Task::gmm, 8192, 3);
    REQUIRE(set.stats.theta_mean[0] == Catch::Approx(0.0).margin(0.05));
    REQUIRE(set.stats.theta_std[0] == Catch::Approx(1.0).epsilon(0.05));
    REQUIRE(set.stats.theta_std[1] == Catch::Approx(1.0).epsilon(0.05));
}
