#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "sbicm/consistency.hpp"
#include "sbicm/errors.hpp"
#include "sbicm/flow_matching.hpp"
#include "sbicm/io.hpp"
#include "sbicm/simulators.hpp"

namespace sbicm {

using nlohmann::json;

constexpr int kSchemaVersion = 1;

inline json to_json(const MlpConfig& cfg) {
    return json{{"input_dim", cfg.input_dim},   {"hidden_widths", cfg.hidden_widths},
                {"output_dim", cfg.output_dim}, {"activation", to_string(cfg.activation)},
                {"dropout_rate", cfg.dropout_rate}, {"l2_weight", cfg.l2_weight}};
}

inline MlpConfig mlp_config_from_json(const json& j) {
    MlpConfig cfg;
    cfg.input_dim = j.at("input_dim").get<std::size_t>();
    cfg.hidden_widths = j.at("hidden_widths").get<std::vector<std::size_t>>();
    cfg.output_dim = j.at("output_dim").get<std::size_t>();
    cfg.activation = activation_from_string(j.at("activation").get<std::string>());
    cfg.dropout_rate = j.at("dropout_rate").get<double>();
    cfg.l2_weight = j.at("l2_weight").get<double>();
    cfg.validate();
    return cfg;
}

// {config, layers: [{weight: [[f64]], bias: [f64]}]}
inline json to_json(const MlpNetwork& net) {
    json layers = json::array();
    for (const auto& layer : net.layers) {
        json weight = json::array();
        for (std::size_t i = 0; i < layer.weight.rows; ++i) {
            json row = json::array();
            for (std::size_t j = 0; j < layer.weight.cols; ++j) row.push_back(layer.weight(i, j));
            weight.push_back(std::move(row));
        }
        layers.push_back(json{{"weight", std::move(weight)}, {"bias", layer.bias}});
    }
    return json{{"config", to_json(net.config)}, {"layers", std::move(layers)}};
}

inline MlpNetwork mlp_from_json(const json& j) {
    MlpNetwork net;
    net.config = mlp_config_from_json(j.at("config"));
    const auto sizes = net.config.layer_sizes();
    const json& layers = j.at("layers");
    if (layers.size() + 1 != sizes.size()) throw ConfigError("checkpoint: layer count mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        MlpNetwork::Layer layer;
        const json& weight = layers[l].at("weight");
        layer.weight = Matrix(sizes[l], sizes[l + 1]);
        if (weight.size() != sizes[l]) throw ConfigError("checkpoint: weight row count mismatch");
        for (std::size_t i = 0; i < sizes[l]; ++i) {
            const json& row = weight[i];
            if (row.size() != sizes[l + 1]) throw ConfigError("checkpoint: weight column count mismatch");
            for (std::size_t jj = 0; jj < sizes[l + 1]; ++jj) layer.weight(i, jj) = row[jj].get<double>();
        }
        layer.bias = layers[l].at("bias").get<std::vector<double>>();
        if (layer.bias.size() != sizes[l + 1]) throw ConfigError("checkpoint: bias length mismatch");
        net.layers.push_back(std::move(layer));
    }
    return net;
}

inline json to_json(const DeepSetNetwork& net) {
    return json{{"pool", "mean"},
                {"summary_dim", net.config.summary_dim},
                {"inner", to_json(net.inner)},
                {"outer", to_json(net.outer)}};
}

inline DeepSetNetwork deepset_from_json(const json& j) {
    DeepSetNetwork net;
    if (j.at("pool").get<std::string>() != "mean") throw ConfigError("checkpoint: unsupported pool");
    net.inner = mlp_from_json(j.at("inner"));
    net.outer = mlp_from_json(j.at("outer"));
    net.config.inner = net.inner.config;
    net.config.outer = net.outer.config;
    net.config.summary_dim = j.at("summary_dim").get<std::size_t>();
    net.config.validate();
    return net;
}

inline json to_json(const ConsistencySchedule& s) {
    return json{{"eps", s.eps},
                {"t_max", s.t_max},
                {"rho", s.rho},
                {"s0", s.s0},
                {"s1", s.s1},
                {"total_iterations", s.total_iterations},
                {"p_mean", s.p_mean},
                {"p_std", s.p_std},
                {"sigma_data", s.sigma_data},
                {"huber_c", s.huber_c}};
}

inline ConsistencySchedule schedule_from_json(const json& j) {
    ConsistencySchedule s;
    s.eps = j.at("eps").get<double>();
    s.t_max = j.at("t_max").get<double>();
    s.rho = j.at("rho").get<double>();
    s.s0 = j.at("s0").get<std::size_t>();
    s.s1 = j.at("s1").get<std::size_t>();
    s.total_iterations = j.at("total_iterations").get<std::size_t>();
    s.p_mean = j.at("p_mean").get<double>();
    s.p_std = j.at("p_std").get<double>();
    s.sigma_data = j.at("sigma_data").get<double>();
    s.huber_c = j.at("huber_c").get<double>();
    s.validate();
    return s;
}

inline json to_json(const Standardization& s) {
    return json{{"theta_mean", s.theta_mean}, {"theta_std", s.theta_std}, {"x_mean", s.x_mean}, {"x_std", s.x_std}};
}

inline Standardization standardization_from_json(const json& j) {
    Standardization s;
    s.theta_mean = j.at("theta_mean").get<std::vector<double>>();
    s.theta_std = j.at("theta_std").get<std::vector<double>>();
    s.x_mean = j.at("x_mean").get<std::vector<double>>();
    s.x_std = j.at("x_std").get<std::vector<double>>();
    return s;
}

namespace detail {

inline json amortized_to_json(const AmortizedNet& net) {
    json j{{"theta_dim", net.theta_dim},
           {"n_obs", net.n_obs},
           {"obs_dim", net.obs_dim},
           {"standardization", to_json(net.standardization)},
           {"backbone", to_json(net.backbone)}};
    if (net.summary) j["summary"] = to_json(*net.summary);
    return j;
}

inline AmortizedNet amortized_from_json(const json& j) {
    AmortizedNet net;
    net.theta_dim = j.at("theta_dim").get<std::size_t>();
    net.n_obs = j.at("n_obs").get<std::size_t>();
    net.obs_dim = j.at("obs_dim").get<std::size_t>();
    net.standardization = standardization_from_json(j.at("standardization"));
    net.backbone = mlp_from_json(j.at("backbone"));
    if (j.contains("summary")) net.summary = deepset_from_json(j.at("summary"));
    net.validate();
    return net;
}

}  // namespace detail

inline json to_json(const ConsistencyModel& model) {
    json j = detail::amortized_to_json(model.net);
    j["schema_version"] = kSchemaVersion;
    j["model_kind"] = "cmpe";
    j["task"] = to_string(model.task);
    j["schedule"] = to_json(model.schedule);
    return j;
}

inline json to_json(const FlowMatchModel& model) {
    json j = detail::amortized_to_json(model.net);
    j["schema_version"] = kSchemaVersion;
    j["model_kind"] = "fmpe";
    j["task"] = to_string(model.task);
    return j;
}

inline std::string checkpoint_model_kind(const json& j) { return j.at("model_kind").get<std::string>(); }

inline ConsistencyModel cmpe_from_json(const json& j) {
    if (checkpoint_model_kind(j) != "cmpe") throw ConfigError("checkpoint: not a cmpe model");
    ConsistencyModel model;
    model.task = task_from_string(j.at("task").get<std::string>());
    model.net = detail::amortized_from_json(j);
    model.schedule = schedule_from_json(j.at("schedule"));
    model.validate();
    return model;
}

inline FlowMatchModel fmpe_from_json(const json& j) {
    if (checkpoint_model_kind(j) != "fmpe") throw ConfigError("checkpoint: not a fmpe model");
    FlowMatchModel model;
    model.task = task_from_string(j.at("task").get<std::string>());
    model.net = detail::amortized_from_json(j);
    model.validate();
    return model;
}

inline void save_checkpoint(const std::filesystem::path& path, const json& j) { atomic_write_text(path, j.dump(2) + "\n"); }

inline json load_checkpoint(const std::filesystem::path& path) { return json::parse(read_text(path)); }

}  // namespace sbicm
