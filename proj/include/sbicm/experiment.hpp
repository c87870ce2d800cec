#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "sbicm/checkpoint.hpp"
#include "sbicm/errors.hpp"
#include "sbicm/reference.hpp"
#include "sbicm/schedule.hpp"
#include "sbicm/simulators.hpp"
#include "sbicm/trainer.hpp"

namespace sbicm {

enum class ModelKind { cmpe, fmpe };

inline std::string to_string(ModelKind kind) { return kind == ModelKind::cmpe ? "cmpe" : "fmpe"; }

inline ModelKind model_kind_from_string(const std::string& s) {
    if (s == "cmpe") return ModelKind::cmpe;
    if (s == "fmpe") return ModelKind::fmpe;
    throw ConfigError("unknown model_kind: " + s);
}

struct TrainingConfig {
    std::size_t epochs = 1;
    std::size_t batch_size = 64;
    double lr0 = 5e-4;
};

struct EvalConfig {
    std::size_t test_instances = 100;  // J
    std::size_t s_draws = 4000;        // approximate draws per instance
    std::size_t n_reference = 4000;    // reference draws per instance
    std::vector<std::size_t> k_steps_list = {1, 2, 5, 10, 15, 20, 30, 50};
    std::size_t n_sbc = 0;  // 0 disables calibration
    std::size_t sbc_draws = 1000;
    std::size_t sbc_k_steps = 10;
};

struct ExperimentConfig {
    Task task = Task::two_moons;
    ModelKind model_kind = ModelKind::cmpe;
    std::size_t budget = 1024;
    std::uint64_t seed = 1;
    MlpConfig backbone;  // input/output dims derived from the task
    bool use_summary = false;
    std::size_t summary_dim = 6;
    ConsistencySchedule schedule;  // used by cmpe only
    TrainingConfig training;
    EvalConfig eval;
    ReferenceSettings reference;

    void validate() const {
        if (training.epochs == 0 || training.batch_size == 0) throw ConfigError("config: epochs and batch_size must be positive");
        if (eval.s_draws == 0 || eval.test_instances == 0) throw ConfigError("config: eval sizes must be positive");
        if (backbone.hidden_widths.empty()) throw ConfigError("config: backbone hidden_widths empty");
    }
};

// Appendix-style defaults per task and model kind.
inline ExperimentConfig default_config(Task task, ModelKind kind) {
    ExperimentConfig cfg;
    cfg.task = task;
    cfg.model_kind = kind;
    cfg.backbone.hidden_widths = {256, 256};
    cfg.backbone.activation = Activation::silu;
    cfg.schedule.eps = 1e-3;
    cfg.schedule.rho = 7.0;
    cfg.schedule.p_mean = -1.1;
    cfg.schedule.p_std = 2.0;
    cfg.schedule.sigma_data = 1.0;
    cfg.schedule.huber_c = default_huber_c(task_info(task).theta_dim);
    cfg.schedule.total_iterations = 1;  // set by the trainer

    switch (task) {
        case Task::gmm:
            cfg.budget = 1024;
            cfg.backbone.dropout_rate = 0.10;
            cfg.backbone.l2_weight = 1e-4;
            cfg.use_summary = true;
            cfg.summary_dim = 6;
            cfg.schedule.s0 = 10;
            cfg.schedule.s1 = 1280;
            cfg.schedule.t_max = 1.0;
            cfg.training = {2000, 64, kind == ModelKind::cmpe ? 1e-4 : 1e-5};
            break;
        case Task::two_moons:
            cfg.budget = 1024;
            cfg.backbone.dropout_rate = 0.05;
            cfg.backbone.l2_weight = 1e-5;
            cfg.schedule.s0 = 10;
            cfg.schedule.s1 = 50;
            cfg.schedule.t_max = 10.0;
            cfg.training = {5000, 64, 5e-4};
            break;
        case Task::inverse_kinematics:
            cfg.budget = 1024;
            cfg.backbone.dropout_rate = 0.05;
            cfg.backbone.l2_weight = 1e-5;
            cfg.schedule.s0 = 10;
            cfg.schedule.s1 = 50;
            cfg.schedule.t_max = 10.0;  // not stated for this task; reused from two moons
            cfg.training = {2000, 32, 5e-4};
            break;
    }
    return cfg;
}

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) {
            if (key == a) {
                ok = true;
                break;
            }
        }
        if (!ok) throw ConfigError("unknown key \"" + key + "\" in " + where);
    }
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

// Strict parser: defaults come from (task, model_kind); any unknown key is an
// error so hyperparameter typos cannot pass silently.
inline ExperimentConfig config_from_json(const json& j) {
    detail::check_keys(j,
                       {"task", "model_kind", "budget", "seed", "backbone", "summary", "schedule", "training", "eval",
                        "reference"},
                       "config");
    if (!j.contains("task")) throw ConfigError("config: missing task");
    if (!j.contains("model_kind")) throw ConfigError("config: missing model_kind");
    if (!j.contains("seed")) throw ConfigError("config: seed is mandatory");
    const Task task = task_from_string(j.at("task").get<std::string>());
    const ModelKind kind = model_kind_from_string(j.at("model_kind").get<std::string>());
    ExperimentConfig cfg = default_config(task, kind);
    detail::maybe(j, "budget", cfg.budget);
    cfg.seed = j.at("seed").get<std::uint64_t>();

    if (j.contains("backbone")) {
        const json& b = j.at("backbone");
        detail::check_keys(b, {"hidden_widths", "activation", "dropout_rate", "l2_weight"}, "config.backbone");
        detail::maybe(b, "hidden_widths", cfg.backbone.hidden_widths);
        if (b.contains("activation")) cfg.backbone.activation = activation_from_string(b.at("activation").get<std::string>());
        detail::maybe(b, "dropout_rate", cfg.backbone.dropout_rate);
        detail::maybe(b, "l2_weight", cfg.backbone.l2_weight);
    }
    if (j.contains("summary")) {
        const json& s = j.at("summary");
        detail::check_keys(s, {"use", "summary_dim"}, "config.summary");
        detail::maybe(s, "use", cfg.use_summary);
        detail::maybe(s, "summary_dim", cfg.summary_dim);
    }
    if (j.contains("schedule")) {
        const json& s = j.at("schedule");
        detail::check_keys(s, {"eps", "t_max", "rho", "s0", "s1", "p_mean", "p_std", "sigma_data", "huber_c"},
                           "config.schedule");
        detail::maybe(s, "eps", cfg.schedule.eps);
        detail::maybe(s, "t_max", cfg.schedule.t_max);
        detail::maybe(s, "rho", cfg.schedule.rho);
        detail::maybe(s, "s0", cfg.schedule.s0);
        detail::maybe(s, "s1", cfg.schedule.s1);
        detail::maybe(s, "p_mean", cfg.schedule.p_mean);
        detail::maybe(s, "p_std", cfg.schedule.p_std);
        detail::maybe(s, "sigma_data", cfg.schedule.sigma_data);
        detail::maybe(s, "huber_c", cfg.schedule.huber_c);
    }
    if (j.contains("training")) {
        const json& t = j.at("training");
        detail::check_keys(t, {"epochs", "batch_size", "lr0"}, "config.training");
        detail::maybe(t, "epochs", cfg.training.epochs);
        detail::maybe(t, "batch_size", cfg.training.batch_size);
        detail::maybe(t, "lr0", cfg.training.lr0);
    }
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        detail::check_keys(e, {"test_instances", "s_draws", "n_reference", "k_steps_list", "n_sbc", "sbc_draws",
                               "sbc_k_steps"},
                           "config.eval");
        detail::maybe(e, "test_instances", cfg.eval.test_instances);
        detail::maybe(e, "s_draws", cfg.eval.s_draws);
        detail::maybe(e, "n_reference", cfg.eval.n_reference);
        detail::maybe(e, "k_steps_list", cfg.eval.k_steps_list);
        detail::maybe(e, "n_sbc", cfg.eval.n_sbc);
        detail::maybe(e, "sbc_draws", cfg.eval.sbc_draws);
        detail::maybe(e, "sbc_k_steps", cfg.eval.sbc_k_steps);
    }
    if (j.contains("reference")) {
        const json& r = j.at("reference");
        detail::check_keys(r, {"gmm_grid_n", "gmm_box", "tm_grid_n", "tm_use_abc", "tm_abc_eps", "ik_abc_eps",
                               "max_proposals"},
                           "config.reference");
        detail::maybe(r, "gmm_grid_n", cfg.reference.gmm_grid_n);
        detail::maybe(r, "gmm_box", cfg.reference.gmm_box);
        detail::maybe(r, "tm_grid_n", cfg.reference.tm_grid_n);
        detail::maybe(r, "tm_use_abc", cfg.reference.tm_use_abc);
        detail::maybe(r, "tm_abc_eps", cfg.reference.tm_abc_eps);
        detail::maybe(r, "ik_abc_eps", cfg.reference.ik_abc_eps);
        detail::maybe(r, "max_proposals", cfg.reference.max_proposals);
    }
    cfg.validate();
    return cfg;
}

inline json config_to_json(const ExperimentConfig& cfg) {
    return json{{"task", to_string(cfg.task)},
                {"model_kind", to_string(cfg.model_kind)},
                {"budget", cfg.budget},
                {"seed", cfg.seed},
                {"backbone",
                 {{"hidden_widths", cfg.backbone.hidden_widths},
                  {"activation", to_string(cfg.backbone.activation)},
                  {"dropout_rate", cfg.backbone.dropout_rate},
                  {"l2_weight", cfg.backbone.l2_weight}}},
                {"summary", {{"use", cfg.use_summary}, {"summary_dim", cfg.summary_dim}}},
                {"schedule",
                 {{"eps", cfg.schedule.eps},
                  {"t_max", cfg.schedule.t_max},
                  {"rho", cfg.schedule.rho},
                  {"s0", cfg.schedule.s0},
                  {"s1", cfg.schedule.s1},
                  {"p_mean", cfg.schedule.p_mean},
                  {"p_std", cfg.schedule.p_std},
                  {"sigma_data", cfg.schedule.sigma_data},
                  {"huber_c", cfg.schedule.huber_c}}},
                {"training", {{"epochs", cfg.training.epochs}, {"batch_size", cfg.training.batch_size}, {"lr0", cfg.training.lr0}}},
                {"eval",
                 {{"test_instances", cfg.eval.test_instances},
                  {"s_draws", cfg.eval.s_draws},
                  {"n_reference", cfg.eval.n_reference},
                  {"k_steps_list", cfg.eval.k_steps_list},
                  {"n_sbc", cfg.eval.n_sbc},
                  {"sbc_draws", cfg.eval.sbc_draws},
                  {"sbc_k_steps", cfg.eval.sbc_k_steps}}},
                {"reference",
                 {{"gmm_grid_n", cfg.reference.gmm_grid_n},
                  {"gmm_box", cfg.reference.gmm_box},
                  {"tm_grid_n", cfg.reference.tm_grid_n},
                  {"tm_use_abc", cfg.reference.tm_use_abc},
                  {"tm_abc_eps", cfg.reference.tm_abc_eps},
                  {"ik_abc_eps", cfg.reference.ik_abc_eps},
                  {"max_proposals", cfg.reference.max_proposals}}}};
}

}  // namespace sbicm
