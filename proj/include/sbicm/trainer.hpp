#pragma once

#include <chrono>
#include <cstdint>
#include <numeric>
#include <vector>

#include "sbicm/consistency.hpp"
#include "sbicm/flow_matching.hpp"
#include "sbicm/simulators.hpp"

namespace sbicm {

struct TrainingOptions {
    std::size_t epochs = 1;
    std::size_t batch_size = 64;
    double lr0 = 5e-4;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
};

struct TrainResult {
    std::vector<double> epoch_losses;  // mean step loss per epoch
    double train_seconds = 0.0;
};

// Standardized training arrays: theta (M x D) and the stacked observation
// rows ((M * n_obs) x obs_dim).
struct PreparedData {
    Matrix theta;
    Matrix x_rows;
    std::size_t n_obs = 1;
};

inline PreparedData prepare_training_data(const TrainingSet& set) {
    const TaskInfo info = task_info(set.task);
    PreparedData data;
    data.n_obs = info.n_obs;
    data.theta = Matrix(set.records.size(), info.theta_dim);
    data.x_rows = Matrix(set.records.size() * info.n_obs, info.obs_dim);
    for (std::size_t m = 0; m < set.records.size(); ++m) {
        for (std::size_t d = 0; d < info.theta_dim; ++d) data.theta(m, d) = set.records[m].theta[d];
        for (std::size_t r = 0; r < info.n_obs; ++r) {
            for (std::size_t j = 0; j < info.obs_dim; ++j) {
                data.x_rows(m * info.n_obs + r, j) = set.records[m].x.values(r, j);
            }
        }
    }
    data.theta = standardize_theta(std::move(data.theta), set.stats);
    data.x_rows = standardize_obs(std::move(data.x_rows), set.stats);
    return data;
}

// Declared summary-network shape: inner 2 x 64 units embedding each row,
// mean pool, outer 1 x 64 units down to summary_dim.
inline DeepSetConfig default_summary_config(std::size_t obs_dim, std::size_t summary_dim, Activation act, double l2) {
    DeepSetConfig cfg;
    cfg.inner.input_dim = obs_dim;
    cfg.inner.hidden_widths = {64, 64};
    cfg.inner.output_dim = 64;
    cfg.inner.activation = act;
    cfg.inner.l2_weight = l2;
    cfg.outer.input_dim = 64;
    cfg.outer.hidden_widths = {64};
    cfg.outer.output_dim = summary_dim;
    cfg.outer.activation = act;
    cfg.outer.l2_weight = l2;
    cfg.summary_dim = summary_dim;
    return cfg;
}

// Builds the shared backbone (+ optional DeepSet) with input/output sizes
// derived from the task; `backbone_template` carries widths, activation,
// dropout and L2.
inline AmortizedNet make_amortized_net(Task task, const MlpConfig& backbone_template, bool use_summary,
                                       std::size_t summary_dim, const Standardization& stats, std::uint64_t init_seed) {
    const TaskInfo info = task_info(task);
    AmortizedNet net;
    net.theta_dim = info.theta_dim;
    net.n_obs = info.n_obs;
    net.obs_dim = info.obs_dim;
    net.standardization = stats;

    Rng rng = Rng::from(init_seed, 0x1217);
    if (use_summary) {
        const DeepSetConfig ds_cfg =
            default_summary_config(info.obs_dim, summary_dim, backbone_template.activation, backbone_template.l2_weight);
        net.summary = DeepSetNetwork::init(ds_cfg, rng);
    }
    MlpConfig cfg = backbone_template;
    cfg.input_dim = info.theta_dim + 1 + (use_summary ? summary_dim : info.n_obs * info.obs_dim);
    cfg.output_dim = info.theta_dim;
    net.backbone = MlpNetwork::init(cfg, rng);
    net.validate();
    return net;
}

namespace detail {

inline std::size_t steps_per_epoch(std::size_t m, std::size_t batch) { return (m + batch - 1) / batch; }

template <typename StepFn>
TrainResult run_epochs(std::size_t n_records, const TrainingOptions& opt, StepFn step) {
    const auto start = std::chrono::steady_clock::now();
    TrainResult result;
    Rng shuffle_rng = Rng::from(opt.seed, 0x5455FF1E);
    std::vector<std::size_t> order(n_records);
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::size_t k = 0;
    for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
        for (std::size_t i = n_records; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.index(i)]);
        double epoch_loss = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t begin = 0; begin < n_records; begin += opt.batch_size) {
            const std::size_t end = std::min(begin + opt.batch_size, n_records);
            epoch_loss += step(std::span<const std::size_t>(order.data() + begin, end - begin), k);
            ++k;
            ++n_batches;
        }
        result.epoch_losses.push_back(epoch_loss / static_cast<double>(n_batches));
    }
    result.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

inline void gather_batch(const PreparedData& data, std::span<const std::size_t> idx, Matrix& theta, Matrix& x_rows) {
    theta = Matrix(idx.size(), data.theta.cols);
    x_rows = Matrix(idx.size() * data.n_obs, data.x_rows.cols);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t d = 0; d < data.theta.cols; ++d) theta(i, d) = data.theta(idx[i], d);
        for (std::size_t r = 0; r < data.n_obs; ++r) {
            for (std::size_t j = 0; j < data.x_rows.cols; ++j) {
                x_rows(i * data.n_obs + r, j) = data.x_rows(idx[i] * data.n_obs + r, j);
            }
        }
    }
}

}  // namespace detail

// Full consistency-training run. Sets schedule.total_iterations to the step
// budget (the curriculum N(k) is defined against it) and owns the optimizer.
inline TrainResult train_cmpe(ConsistencyModel& model, const TrainingSet& set, const TrainingOptions& opt) {
    const PreparedData data = prepare_training_data(set);
    const std::size_t total_steps = opt.epochs * detail::steps_per_epoch(set.records.size(), opt.batch_size);
    model.schedule.total_iterations = total_steps;
    model.validate();

    OptimizerState optimizer = OptimizerState::init(model.net.param_count(), opt.lr0, total_steps, opt.weight_decay);
    Rng step_rng = Rng::from(opt.seed, 0xC3E9);
    Matrix theta, x_rows;
    return detail::run_epochs(set.records.size(), opt, [&](std::span<const std::size_t> idx, std::size_t k) {
        detail::gather_batch(data, idx, theta, x_rows);
        return cmpe_training_step(model, optimizer, theta, x_rows, k, step_rng).loss;
    });
}

inline TrainResult train_fmpe(FlowMatchModel& model, const TrainingSet& set, const TrainingOptions& opt) {
    const PreparedData data = prepare_training_data(set);
    const std::size_t total_steps = opt.epochs * detail::steps_per_epoch(set.records.size(), opt.batch_size);
    model.validate();

    OptimizerState optimizer = OptimizerState::init(model.net.param_count(), opt.lr0, total_steps, opt.weight_decay);
    Rng step_rng = Rng::from(opt.seed, 0xF39E);
    Matrix theta, x_rows;
    return detail::run_epochs(set.records.size(), opt, [&](std::span<const std::size_t> idx, std::size_t) {
        detail::gather_batch(data, idx, theta, x_rows);
        return fmpe_training_step(model, optimizer, theta, x_rows, step_rng).loss;
    });
}

}  // namespace sbicm
