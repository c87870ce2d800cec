#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cmath>

#include "sbicm/consistency.hpp"
#include "sbicm/flow_matching.hpp"
#include "sbicm/stats.hpp"
#include "sbicm/trainer.hpp"
#include "support/fd.hpp"

using namespace sbicm;

namespace {

FlowMatchModel toy_fmpe(bool zero_backbone, std::uint64_t seed = 7) {
    FlowMatchModel model;
    model.task = Task::two_moons;
    model.net.theta_dim = 1;
    model.net.n_obs = 1;
    model.net.obs_dim = 1;
    model.net.standardization = Standardization::identity(1, 1);
    MlpConfig cfg;
    cfg.input_dim = 3;
    cfg.hidden_widths = {6};
    cfg.output_dim = 1;
    cfg.activation = Activation::silu;
    Rng rng(seed);
    model.net.backbone = MlpNetwork::init(cfg, rng);
    if (zero_backbone) {
        for (auto& layer : model.net.backbone.layers) {
            for (auto& w : layer.weight.values) w = 0.0;
        }
    }
    model.validate();
    return model;
}

ObservationSet unit_obs(double value = 0.2) {
    ObservationSet x;
    x.values = Matrix(1, 1);
    x.values(0, 0) = value;
    return x;
}

// Exact conditional-expectation field transporting N(0,1) at t=1 to the
// target N(m, s^2) at t=0 along the rectified interpolation.
struct GaussianField {
    double m, s;
    double a(double t) const {
        const double var = (1.0 - t) * (1.0 - t) * s * s + t * t;
        return (t - (1.0 - t) * s * s) / var;
    }
    double operator()(double theta, double t) const { return -m + a(t) * (theta - (1.0 - t) * m); }
};

}  // namespace

TEST_CASE("zero field with matching endpoints gives zero loss", "[flow_matching]") {
    FlowMatchModel model = toy_fmpe(true);
    const std::size_t b = 6;
    Matrix theta(b, 1), x_rows(b, 1, 0.0);
    Rng rng(91);
    for (auto& v : theta.values) v = rng.normal();
    FmpeStepDraws draws;
    draws.t.assign(b, 0.3);
    draws.theta1 = theta;  // theta_1 = theta: target field is zero
    const FmpeLoss loss = fmpe_loss(model, theta, x_rows, draws, 0, false);
    REQUIRE(loss.data_loss == 0.0);
}

TEST_CASE("zero field loss equals the expected squared norm", "[flow_matching]") {
    // mu = 0: loss = mean ||theta1 - theta||^2 ~ D + E||theta||^2 = 2 on
    // standardized 1-d data.
    FlowMatchModel model = toy_fmpe(true);
    const std::size_t b = 60000;
    Matrix theta(b, 1), x_rows(b, 1, 0.0);
    Rng rng(92);
    for (auto& v : theta.values) v = rng.normal();
    const FmpeStepDraws draws = draw_fmpe_step(b, 1, rng);
    const FmpeLoss loss = fmpe_loss(model, theta, x_rows, draws, 0, false);
    REQUIRE(loss.data_loss == Catch::Approx(2.0).epsilon(0.03));
}

TEST_CASE("fmpe loss is invariant to batch order", "[flow_matching]") {
    FlowMatchModel model = toy_fmpe(false);
    const std::size_t b = 8;
    Matrix theta(b, 1), x_rows(b, 1);
    Rng rng(93);
    for (auto& v : theta.values) v = rng.normal();
    for (auto& v : x_rows.values) v = rng.normal();
    const FmpeStepDraws draws = draw_fmpe_step(b, 1, rng);
    const double loss_a = fmpe_loss(model, theta, x_rows, draws, 0, false).data_loss;

    const std::size_t perm[8] = {4, 1, 6, 3, 0, 7, 2, 5};
    Matrix theta_p(b, 1), x_p(b, 1);
    FmpeStepDraws draws_p = draws;
    for (std::size_t i = 0; i < b; ++i) {
        theta_p(i, 0) = theta(perm[i], 0);
        x_p(i, 0) = x_rows(perm[i], 0);
        draws_p.t[i] = draws.t[perm[i]];
        draws_p.theta1(i, 0) = draws.theta1(perm[i], 0);
    }
    const double loss_b = fmpe_loss(model, theta_p, x_p, draws_p, 0, false).data_loss;
    REQUIRE(loss_a == Catch::Approx(loss_b).epsilon(1e-12));
}

TEST_CASE("fmpe gradients match finite differences", "[flow_matching]") {
    FlowMatchModel model = toy_fmpe(false);
    model.net.backbone.config.l2_weight = 0.02;
    const std::size_t b = 5;
    Matrix theta(b, 1), x_rows(b, 1);
    Rng rng(94);
    for (auto& v : theta.values) v = rng.normal();
    for (auto& v : x_rows.values) v = rng.normal();
    const FmpeStepDraws draws = draw_fmpe_step(b, 1, rng);

    auto loss_fn = [&]() { return fmpe_loss(model, theta, x_rows, draws, 0, false).loss; };
    const FmpeLoss loss = fmpe_loss(model, theta, x_rows, draws, 0, false);
    const auto report = testing::check_gradients(param_chunks(model.net), loss_fn, grad_chunks(model.net, loss.grads));
    REQUIRE(report.max_rel_err < 1e-4);
}

TEST_CASE("fmpe gradients reach the summary network", "[flow_matching]") {
    const TrainingSet set = generate_training_set(Task::gmm, 16, 10);
    MlpConfig bb;
    bb.hidden_widths = {8};
    bb.activation = Activation::silu;
    FlowMatchModel model;
    model.task = Task::gmm;
    model.net = make_amortized_net(Task::gmm, bb, true, 3, set.stats, 15);
    model.validate();

    const PreparedData data = prepare_training_data(set);
    Matrix theta(4, 2), x_rows(40, 2);
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t d = 0; d < 2; ++d) theta(i, d) = data.theta(i, d);
        for (std::size_t r = 0; r < 10; ++r) {
            for (std::size_t d = 0; d < 2; ++d) x_rows(i * 10 + r, d) = data.x_rows(i * 10 + r, d);
        }
    }
    Rng rng(95);
    const FmpeStepDraws draws = draw_fmpe_step(4, 2, rng);
    const FmpeLoss loss = fmpe_loss(model, theta, x_rows, draws, 0, false);
    REQUIRE(loss.grads.summary.has_value());

    auto loss_fn = [&]() { return fmpe_loss(model, theta, x_rows, draws, 0, false).loss; };
    const auto report = testing::check_gradients(param_chunks(model.net), loss_fn, grad_chunks(model.net, loss.grads));
    REQUIRE(report.max_rel_err < 1e-4);
}

TEST_CASE("zero field sampling returns the de-standardized noise", "[flow_matching]") {
    FlowMatchModel model = toy_fmpe(true);
    model.net.standardization.theta_mean = {1.5};
    model.net.standardization.theta_std = {0.5};
    const std::size_t n = 20;
    const Matrix draws = fmpe_sample(model, unit_obs(), 10, n, 44);
    for (std::size_t j = 0; j < n; ++j) {
        Rng stream = Rng::from(44, j);
        REQUIRE(draws(j, 0) == 1.5 + 0.5 * stream.normal());
    }
}

TEST_CASE("euler on the exact gaussian field converges to the analytic transport", "[flow_matching]") {
    const GaussianField field{1.3, 0.6};
    auto mu = [&](const Matrix& theta, double t) {
        Matrix out(theta.rows, 1);
        for (std::size_t j = 0; j < theta.rows; ++j) out(j, 0) = field(theta(j, 0), t);
        return out;
    };

    // the exact flow map sends theta_1 to m + s * theta_1
    const std::size_t n = 64;
    std::vector<double> start(n);
    for (std::size_t j = 0; j < n; ++j) {
        Rng stream = Rng::from(31, j);
        start[j] = stream.normal();
    }

    double prev_err = 1e300;
    for (std::size_t k = 10; k <= 1280; k *= 2) {
        const Matrix end = fmpe_sample_core(mu, 1, k, n, 31);
        double err = 0.0;
        for (std::size_t j = 0; j < n; ++j) err = std::max(err, std::abs(end(j, 0) - (1.3 + 0.6 * start[j])));
        REQUIRE(err < prev_err);
        prev_err = err;
        if (k == 1280) REQUIRE(err < 1e-2);
    }

    const Matrix end1000 = fmpe_sample_core(mu, 1, 1000, n, 31);
    double mean_end = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean_end += end1000(j, 0);
    mean_end /= static_cast<double>(n);
    double mean_expected = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean_expected += 1.3 + 0.6 * start[j];
    mean_expected /= static_cast<double>(n);
    REQUIRE(std::abs(mean_end - mean_expected) < 1e-2);
}

TEST_CASE("backbone parity with the consistency model", "[flow_matching]") {
    const TrainingSet set = generate_training_set(Task::two_moons, 16, 2);
    MlpConfig bb;
    bb.hidden_widths = {256, 256};
    bb.activation = Activation::silu;
    bb.dropout_rate = 0.05;

    ConsistencyModel cm;
    cm.task = Task::two_moons;
    cm.net = make_amortized_net(Task::two_moons, bb, false, 0, set.stats, 5);
    FlowMatchModel fm;
    fm.task = Task::two_moons;
    fm.net = make_amortized_net(Task::two_moons, bb, false, 0, set.stats, 5);
    REQUIRE(cm.net.param_count() == fm.net.param_count());
}

TEST_CASE("per-draw cost grows with k", "[flow_matching]") {
    // coarse check; the acceptance suite fits the full linear model
    FlowMatchModel model = toy_fmpe(false);
    const auto time_k = [&](std::size_t k) {
        const auto start = std::chrono::steady_clock::now();
        fmpe_sample(model, unit_obs(), k, 4000, 1);
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    };
    time_k(10);  // warm up
    const double t10 = time_k(10);
    const double t40 = time_k(40);
    REQUIRE(t40 / t10 > 2.0);
    REQUIRE(t40 / t10 < 8.0);
}
