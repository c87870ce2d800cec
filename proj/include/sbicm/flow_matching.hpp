#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sbicm/amortized_net.hpp"
#include "sbicm/errors.hpp"
#include "sbicm/matrix.hpp"
#include "sbicm/rng.hpp"
#include "sbicm/simulators.hpp"

namespace sbicm {

// Rectified conditional flow matching: mu_phi regresses the straight-path
// field theta_1 - theta along theta_t = (1-t) theta + t theta_1.
struct FlowMatchModel {
    Task task = Task::two_moons;
    AmortizedNet net;

    std::size_t theta_dim() const { return net.theta_dim; }

    void validate() const { net.validate(); }
};

struct FmpeStepDraws {
    std::vector<double> t;  // per element, U(0,1)
    Matrix theta1;          // b x D unit-Gaussian endpoints
};

inline FmpeStepDraws draw_fmpe_step(std::size_t batch, std::size_t theta_dim, Rng& rng) {
    FmpeStepDraws draws;
    draws.t.resize(batch);
    draws.theta1 = Matrix(batch, theta_dim);
    for (std::size_t i = 0; i < batch; ++i) {
        draws.t[i] = rng.uniform();
        for (std::size_t j = 0; j < theta_dim; ++j) draws.theta1(i, j) = rng.normal();
    }
    return draws;
}

struct FmpeLoss {
    double loss = 0.0;       // data term + L2 penalties
    double data_loss = 0.0;  // mean over batch of || (theta1 - theta) - mu ||^2
    AmortizedGradients grads;
};

inline FmpeLoss fmpe_loss(const FlowMatchModel& model, const Matrix& theta_std, const Matrix& x_rows_std,
                          const FmpeStepDraws& draws, std::uint64_t dropout_seed, bool train_mode) {
    const std::size_t b = theta_std.rows, d = model.net.theta_dim, c = model.net.cond_dim();
    if (draws.theta1.rows != b) throw DimensionError("fmpe_loss: draw batch mismatch");

    DeepSetCache summary_cache;
    const Matrix cond =
        make_condition(model.net, x_rows_std, train_mode, dropout_seed, model.net.summary ? &summary_cache : nullptr);

    Matrix input(b, d + 1 + c);
    for (std::size_t i = 0; i < b; ++i) {
        double* row = input.row(i);
        const double t = draws.t[i];
        for (std::size_t j = 0; j < d; ++j) row[j] = (1.0 - t) * theta_std(i, j) + t * draws.theta1(i, j);
        row[d] = t;
        for (std::size_t j = 0; j < c; ++j) row[d + 1 + j] = cond(i, j);
    }

    MlpCache cache;
    const Matrix mu = mlp_forward(model.net.backbone, input, train_mode, dropout_seed, &cache);

    const double inv_b = 1.0 / static_cast<double>(b);
    Matrix out_grad(b, d);
    double data_loss = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            const double target = draws.theta1(i, j) - theta_std(i, j);
            const double resid = mu(i, j) - target;
            data_loss += resid * resid * inv_b;
            out_grad(i, j) = 2.0 * resid * inv_b;
        }
    }
    if (!std::isfinite(data_loss)) throw DivergenceError("fmpe_loss: non-finite loss");

    FmpeLoss result;
    result.data_loss = data_loss;
    result.grads.backbone = mlp_backward(model.net.backbone, cache, out_grad);
    if (model.net.summary) {
        Matrix cond_grad(b, c);
        for (std::size_t i = 0; i < b; ++i) {
            const double* in_grad = result.grads.backbone.input.row(i);
            for (std::size_t j = 0; j < c; ++j) cond_grad(i, j) = in_grad[d + 1 + j];
        }
        result.grads.summary = deepset_backward(*model.net.summary, summary_cache, cond_grad);
    }
    result.loss = data_loss + l2_penalty(model.net);
    return result;
}

struct FmpeStepResult {
    double loss = 0.0;
};

inline FmpeStepResult fmpe_training_step(FlowMatchModel& model, OptimizerState& opt, const Matrix& theta_std,
                                         const Matrix& x_rows_std, Rng& rng) {
    const FmpeStepDraws draws = draw_fmpe_step(theta_std.rows, model.net.theta_dim, rng);
    const std::uint64_t dropout_seed = rng.next_u64();
    const FmpeLoss loss = fmpe_loss(model, theta_std, x_rows_std, draws, dropout_seed, true);
    adamw_step(opt, param_chunks(model.net), grad_chunks(model.net, loss.grads));
    return {loss.loss};
}

// Explicit Euler from t = 1 to t = 0 with step 1/K on d theta = -mu dt
// solved in reverse; k_steps field evaluations per draw. theta starts at the
// unit-Gaussian endpoint drawn per-draw from its own substream.
template <typename FieldFn>  // (const Matrix& theta, double t) -> Matrix
Matrix fmpe_sample_core(FieldFn&& mu, std::size_t theta_dim, std::size_t k_steps, std::size_t n_draws,
                        std::uint64_t seed) {
    if (k_steps == 0) throw DomainError("fmpe_sample: k_steps must be >= 1");
    Matrix theta(n_draws, theta_dim);
    for (std::size_t j = 0; j < n_draws; ++j) {
        Rng stream = Rng::from(seed, j);
        for (std::size_t i = 0; i < theta_dim; ++i) theta(j, i) = stream.normal();
    }
    const double dt = 1.0 / static_cast<double>(k_steps);
    for (std::size_t step = 0; step < k_steps; ++step) {
        const double t = 1.0 - static_cast<double>(step) * dt;
        const Matrix field = mu(theta, t);
        for (std::size_t i = 0; i < theta.values.size(); ++i) theta.values[i] -= dt * field.values[i];
    }
    return theta;
}

inline Matrix fmpe_sample(const FlowMatchModel& model, const ObservationSet& x_obs, std::size_t k_steps,
                          std::size_t n_draws, std::uint64_t seed) {
    const std::size_t d = model.net.theta_dim, c = model.net.cond_dim();
    const Matrix cond_row = condition_for_observation(model.net, x_obs);
    Matrix input;
    Matrix draws = fmpe_sample_core(
        [&](const Matrix& theta, double t) {
            input = Matrix(theta.rows, d + 1 + c);
            for (std::size_t j = 0; j < theta.rows; ++j) {
                double* row = input.row(j);
                for (std::size_t i = 0; i < d; ++i) row[i] = theta(j, i);
                row[d] = t;
                const double* cd = cond_row.row(0);
                for (std::size_t i = 0; i < c; ++i) row[d + 1 + i] = cd[i];
            }
            return mlp_forward(model.net.backbone, input, false, 0);
        },
        d, k_steps, n_draws, seed);
    return destandardize_theta(std::move(draws), model.net.standardization);
}

}  // namespace sbicm
