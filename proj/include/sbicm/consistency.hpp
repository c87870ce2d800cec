#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sbicm/amortized_net.hpp"
#include "sbicm/errors.hpp"
#include "sbicm/matrix.hpp"
#include "sbicm/rng.hpp"
#include "sbicm/schedule.hpp"
#include "sbicm/simulators.hpp"

namespace sbicm {

// f_phi(theta, t; x) = c_skip(t) theta + c_out(t) F_phi(theta, t; x),
// trained so that every point of the probability-flow trajectory maps to its
// origin at t = eps.
struct ConsistencyModel {
    Task task = Task::two_moons;
    AmortizedNet net;
    ConsistencySchedule schedule;

    std::size_t theta_dim() const { return net.theta_dim; }

    void validate() const {
        net.validate();
        schedule.validate();
    }
};

struct ConsistencyCache {
    const ConsistencyModel* model = nullptr;
    MlpCache backbone;
    std::vector<double> t;
    Matrix theta_t;
};

namespace detail {

inline void check_time_domain(double t, const ConsistencySchedule& sched) {
    const double slack = 1e-12 * sched.t_max;
    if (!(t >= sched.eps - slack && t <= sched.t_max + slack)) {
        throw DomainError("consistency_forward: t = " + std::to_string(t) + " outside [eps, t_max]");
    }
}

}  // namespace detail

// Batched consistency function. theta_t is (b x D), t has one entry per row,
// cond is (b x C). At t = eps the output equals theta_t bitwise: the skip
// coefficients reduce to 1 and 0 exactly.
inline Matrix consistency_forward(const ConsistencyModel& model, const Matrix& theta_t, const std::vector<double>& t,
                                  const Matrix& cond, bool train_mode, std::uint64_t rng_seed,
                                  ConsistencyCache* cache = nullptr) {
    const std::size_t b = theta_t.rows, d = model.net.theta_dim, c = model.net.cond_dim();
    if (theta_t.cols != d) throw DimensionError("consistency_forward: theta dimension mismatch");
    if (t.size() != b || cond.rows != b || cond.cols != c) throw DimensionError("consistency_forward: batch shape mismatch");
    for (double ti : t) detail::check_time_domain(ti, model.schedule);

    Matrix input(b, d + 1 + c);
    for (std::size_t i = 0; i < b; ++i) {
        double* row = input.row(i);
        const double* th = theta_t.row(i);
        for (std::size_t j = 0; j < d; ++j) row[j] = th[j];
        row[d] = t[i];
        const double* cd = cond.row(i);
        for (std::size_t j = 0; j < c; ++j) row[d + 1 + j] = cd[j];
    }

    if (cache) {
        cache->model = &model;
        cache->t = t;
        cache->theta_t = theta_t;
    }
    Matrix raw = mlp_forward(model.net.backbone, input, train_mode, rng_seed, cache ? &cache->backbone : nullptr);

    Matrix out(b, d);
    for (std::size_t i = 0; i < b; ++i) {
        const double skip = c_skip(t[i], model.schedule);
        const double scale = c_out(t[i], model.schedule);
        const double* th = theta_t.row(i);
        const double* fr = raw.row(i);
        double* o = out.row(i);
        for (std::size_t j = 0; j < d; ++j) o[j] = skip * th[j] + scale * fr[j];
    }
    return out;
}

struct ConsistencyBackward {
    MlpGradients backbone;  // includes L2
    Matrix theta_grad;      // b x D, d loss / d theta_t through both paths
    Matrix cond_grad;       // b x C
};

inline ConsistencyBackward consistency_backward(const ConsistencyModel& model, const ConsistencyCache& cache,
                                                const Matrix& out_grad) {
    if (cache.model != &model) throw InternalError("consistency_backward: cache does not belong to this model");
    const std::size_t b = out_grad.rows, d = model.net.theta_dim, c = model.net.cond_dim();

    Matrix scaled(b, d);
    for (std::size_t i = 0; i < b; ++i) {
        const double scale = c_out(cache.t[i], model.schedule);
        for (std::size_t j = 0; j < d; ++j) scaled(i, j) = scale * out_grad(i, j);
    }

    ConsistencyBackward back;
    back.backbone = mlp_backward(model.net.backbone, cache.backbone, scaled);

    back.theta_grad = Matrix(b, d);
    back.cond_grad = Matrix(b, c);
    for (std::size_t i = 0; i < b; ++i) {
        const double skip = c_skip(cache.t[i], model.schedule);
        const double* in_grad = back.backbone.input.row(i);
        for (std::size_t j = 0; j < d; ++j) back.theta_grad(i, j) = in_grad[j] + skip * out_grad(i, j);
        for (std::size_t j = 0; j < c; ++j) back.cond_grad(i, j) = in_grad[d + 1 + j];
    }
    return back;
}

// Per-element randomness of one consistency-training step, drawn up front so
// the same batch can be replayed against finite differences.
struct CmpeStepDraws {
    std::vector<double> grid;
    Matrix z;                            // b x D unit noise
    std::vector<std::size_t> index;      // 0-based noise index per element
};

inline CmpeStepDraws draw_cmpe_step(const ConsistencyModel& model, std::size_t batch, std::size_t k, Rng& rng) {
    CmpeStepDraws draws;
    const std::size_t n = discretization_steps(k, model.schedule);
    draws.grid = time_grid(n, model.schedule);
    draws.z = Matrix(batch, model.net.theta_dim);
    for (double& v : draws.z.values) v = rng.normal();
    draws.index.resize(batch);
    const std::vector<double> w = noise_index_weights(draws.grid, model.schedule);
    for (std::size_t i = 0; i < batch; ++i) {
        const double u = rng.uniform();
        double acc = 0.0;
        std::size_t pick = w.size() - 1;
        for (std::size_t j = 0; j < w.size(); ++j) {
            acc += w[j];
            if (u < acc) {
                pick = j;
                break;
            }
        }
        draws.index[i] = pick;
    }
    return draws;
}

struct CmpeLoss {
    double loss = 0.0;       // data term + L2 penalties
    double data_loss = 0.0;  // mean over batch of lambda(t_i) d(u+, u-)
    AmortizedGradients grads;
};

// Consistency loss for one batch: the student runs at t_{i+1}, the teacher at
// t_i on the same noised parameter. The teacher never contributes gradients;
// in regular training it is the student's own weights, refreshed every step.
// Student and teacher share dropout masks through the common seed.
inline CmpeLoss cmpe_loss(const ConsistencyModel& student, const ConsistencyModel& teacher, const Matrix& theta_std,
                          const Matrix& x_rows_std, const CmpeStepDraws& draws, std::uint64_t dropout_seed,
                          bool train_mode, std::size_t k_for_diagnostics = 0) {
    const std::size_t b = theta_std.rows, d = student.net.theta_dim;
    if (draws.z.rows != b) throw DimensionError("cmpe_loss: draw batch mismatch");

    DeepSetCache summary_cache;
    const Matrix cond = make_condition(student.net, x_rows_std, train_mode, dropout_seed,
                                       student.net.summary ? &summary_cache : nullptr);
    const bool same_model = &student == &teacher;
    const Matrix teacher_cond = same_model ? cond : make_condition(teacher.net, x_rows_std, train_mode, dropout_seed);

    Matrix student_theta(b, d), teacher_theta(b, d);
    std::vector<double> t_hi(b), t_lo(b);
    for (std::size_t i = 0; i < b; ++i) {
        t_lo[i] = draws.grid[draws.index[i]];
        t_hi[i] = draws.grid[draws.index[i] + 1];
        for (std::size_t j = 0; j < d; ++j) {
            student_theta(i, j) = theta_std(i, j) + t_hi[i] * draws.z(i, j);
            teacher_theta(i, j) = theta_std(i, j) + t_lo[i] * draws.z(i, j);
        }
    }

    ConsistencyCache cache;
    const Matrix u_student = consistency_forward(student, student_theta, t_hi, cond, train_mode, dropout_seed, &cache);
    const Matrix u_teacher = consistency_forward(teacher, teacher_theta, t_lo, teacher_cond, train_mode, dropout_seed);

    const double c = student.schedule.huber_c;
    const double inv_b = 1.0 / static_cast<double>(b);
    Matrix out_grad(b, d);
    double data_loss = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = u_student(i, j) - u_teacher(i, j);
            sq += diff * diff;
        }
        const double root = std::sqrt(sq + c * c);
        const double lambda = 1.0 / (t_hi[i] - t_lo[i]);
        const double term = lambda * (root - c);
        if (!std::isfinite(term)) {
            throw DivergenceError("cmpe_loss: non-finite loss at k=" + std::to_string(k_for_diagnostics) + ", i=" +
                                  std::to_string(draws.index[i] + 1) + ", t_i=" + std::to_string(t_lo[i]));
        }
        data_loss += term * inv_b;
        const double coeff = lambda * inv_b / root;
        for (std::size_t j = 0; j < d; ++j) out_grad(i, j) = coeff * (u_student(i, j) - u_teacher(i, j));
    }

    CmpeLoss result;
    result.data_loss = data_loss;
    ConsistencyBackward back = consistency_backward(student, cache, out_grad);
    result.grads.backbone = std::move(back.backbone);
    if (student.net.summary) {
        result.grads.summary = deepset_backward(*student.net.summary, summary_cache, back.cond_grad);
    }
    result.loss = data_loss + l2_penalty(student.net);
    if (!std::isfinite(result.loss)) {
        throw DivergenceError("cmpe_loss: non-finite total loss at k=" + std::to_string(k_for_diagnostics));
    }
    return result;
}

struct TrainStepResult {
    double loss = 0.0;
    std::size_t grid_points = 0;
};

// One consistency-training step: sample (z, i), evaluate the student/teacher
// pair, apply AdamW to backbone and summary jointly.
inline TrainStepResult cmpe_training_step(ConsistencyModel& model, OptimizerState& opt, const Matrix& theta_std,
                                          const Matrix& x_rows_std, std::size_t k, Rng& rng) {
    if (k >= model.schedule.total_iterations) throw DomainError("cmpe_training_step: k out of range");
    const CmpeStepDraws draws = draw_cmpe_step(model, theta_std.rows, k, rng);
    const std::uint64_t dropout_seed = rng.next_u64();
    const CmpeLoss loss = cmpe_loss(model, model, theta_std, x_rows_std, draws, dropout_seed, true, k);
    adamw_step(opt, param_chunks(model.net), grad_chunks(model.net, loss.grads));
    return {loss.loss, draws.grid.size()};
}

// Convenience wrapper for single-parameter-vector batches.
inline std::vector<double> consistency_forward_single(const ConsistencyModel& model, std::span<const double> theta,
                                                      double t, const Matrix& cond_row) {
    Matrix th(1, theta.size());
    for (std::size_t j = 0; j < theta.size(); ++j) th(0, j) = theta[j];
    Matrix out = consistency_forward(model, th, {t}, cond_row, false, 0);
    return std::vector<double>(out.values.begin(), out.values.end());
}

// Multi-step stochastic sampling core: theta_K ~ N(0, T^2 I), then
// theta_k <- f(theta_{k+1}, t_{k+1}) + sqrt(t_k^2 - eps^2) z_k down to k = 1.
// k_steps counts evaluations of f; the time grid has k_steps + 1 rho-spaced
// points from eps to t_max, and the final pass adds no noise. Draw j consumes
// only its own substream, so the result is independent of batching.
template <typename ConsistencyFn>  // (const Matrix& theta, double t) -> Matrix
Matrix multistep_sample_core(ConsistencyFn&& f, std::size_t theta_dim, const ConsistencySchedule& sched,
                             std::size_t k_steps, std::size_t n_draws, std::uint64_t seed) {
    if (k_steps == 0) throw DomainError("multistep_sample: k_steps must be >= 1");
    const std::vector<double> grid = time_grid(k_steps + 1, sched);

    std::vector<Rng> streams;
    streams.reserve(n_draws);
    for (std::size_t j = 0; j < n_draws; ++j) streams.push_back(Rng::from(seed, j));

    Matrix theta(n_draws, theta_dim);
    for (std::size_t j = 0; j < n_draws; ++j) {
        for (std::size_t c = 0; c < theta_dim; ++c) theta(j, c) = sched.t_max * streams[j].normal();
    }

    for (std::size_t step = k_steps; step >= 1; --step) {
        theta = f(theta, grid[step]);
        if (step > 1) {
            const double sd = std::sqrt(grid[step - 1] * grid[step - 1] - sched.eps * sched.eps);
            for (std::size_t j = 0; j < n_draws; ++j) {
                for (std::size_t c = 0; c < theta_dim; ++c) theta(j, c) += sd * streams[j].normal();
            }
        }
    }
    return theta;
}

// Model-bound multi-step sampler; returns de-standardized draws.
inline Matrix multistep_sample(const ConsistencyModel& model, const ObservationSet& x_obs, std::size_t k_steps,
                               std::size_t n_draws, std::uint64_t seed) {
    const Matrix cond_row = condition_for_observation(model.net, x_obs);
    const Matrix cond = replicate_row(cond_row, n_draws);
    Matrix draws = multistep_sample_core(
        [&](const Matrix& theta, double t) {
            const std::vector<double> times(theta.rows, t);
            return consistency_forward(model, theta, times, cond, false, 0);
        },
        model.net.theta_dim, model.schedule, k_steps, n_draws, seed);
    return destandardize_theta(std::move(draws), model.net.standardization);
}

namespace detail {

// Determinant via LU with partial pivoting; n is tiny (theta dimension).
inline double determinant(std::vector<double> a, std::size_t n) {
    double det = 1.0;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::abs(a[r * n + col]) > std::abs(a[pivot * n + col])) pivot = r;
        }
        if (pivot != col) {
            for (std::size_t j = 0; j < n; ++j) std::swap(a[col * n + j], a[pivot * n + j]);
            det = -det;
        }
        const double p = a[col * n + col];
        if (p == 0.0) return 0.0;
        det *= p;
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r * n + col] / p;
            for (std::size_t j = col; j < n; ++j) a[r * n + j] -= f * a[col * n + j];
        }
    }
    return det;
}

}  // namespace detail

struct DensityResult {
    Matrix draws;                     // n x D, de-standardized
    std::vector<double> log_density;  // log p(theta | x) per draw
};

// Single-step sampling with the change-of-variables density: draw
// theta_T ~ N(0, T^2 I), push through f, and account for the Jacobian of f
// at theta_T (D reverse-mode passes, batched over draws). The
// de-standardization Jacobian is included.
inline DensityResult one_step_density(const ConsistencyModel& model, const ObservationSet& x_obs, std::size_t n_draws,
                                      std::uint64_t seed) {
    const std::size_t d = model.net.theta_dim;
    if (d > 8) throw DomainError("one_step_density: theta dimension too large for dense Jacobians");
    const Matrix cond_row = condition_for_observation(model.net, x_obs);
    const Matrix cond = replicate_row(cond_row, n_draws);
    const double t_max = model.schedule.t_max;

    Matrix theta_latent(n_draws, d);
    for (std::size_t j = 0; j < n_draws; ++j) {
        Rng stream = Rng::from(seed, j);
        for (std::size_t c = 0; c < d; ++c) theta_latent(j, c) = t_max * stream.normal();
    }

    ConsistencyCache cache;
    const std::vector<double> t(n_draws, t_max);
    Matrix draws_std = consistency_forward(model, theta_latent, t, cond, false, 0, &cache);

    // jac[j] holds the D x D Jacobian d f / d theta_T for draw j, row-major.
    std::vector<std::vector<double>> jac(n_draws, std::vector<double>(d * d));
    for (std::size_t out_dim = 0; out_dim < d; ++out_dim) {
        Matrix out_grad(n_draws, d);
        for (std::size_t j = 0; j < n_draws; ++j) out_grad(j, out_dim) = 1.0;
        const ConsistencyBackward back = consistency_backward(model, cache, out_grad);
        for (std::size_t j = 0; j < n_draws; ++j) {
            for (std::size_t c = 0; c < d; ++c) jac[j][out_dim * d + c] = back.theta_grad(j, c);
        }
    }

    DensityResult result;
    result.log_density.resize(n_draws);
    const double log_norm = -0.5 * static_cast<double>(d) * std::log(2.0 * 3.14159265358979323846) -
                            static_cast<double>(d) * std::log(t_max);
    const double destd_jacobian = model.net.standardization.theta_log_jacobian();
    for (std::size_t j = 0; j < n_draws; ++j) {
        double sq = 0.0;
        for (std::size_t c = 0; c < d; ++c) sq += theta_latent(j, c) * theta_latent(j, c);
        const double det = detail::determinant(jac[j], d);
        if (std::abs(det) < 1e-300) throw DomainError("one_step_density: singular Jacobian (degenerate map)");
        result.log_density[j] = log_norm - 0.5 * sq / (t_max * t_max) - std::log(std::abs(det)) - destd_jacobian;
    }
    result.draws = destandardize_theta(std::move(draws_std), model.net.standardization);
    return result;
}

}  // namespace sbicm
