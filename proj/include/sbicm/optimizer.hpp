#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sbicm/errors.hpp"
#include "sbicm/mlp.hpp"

namespace sbicm {

// One named span of parameters (a weight matrix or bias vector), so the
// optimizer can report which layer produced a bad gradient.
struct ParamChunk {
    std::span<double> values;
    std::size_t layer_index;
};

struct GradChunk {
    std::span<const double> values;
    std::size_t layer_index;
};

inline std::vector<ParamChunk> param_chunks(MlpNetwork& net, std::size_t layer_offset = 0) {
    std::vector<ParamChunk> chunks;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        chunks.push_back({std::span<double>(net.layers[l].weight.values), layer_offset + l});
        chunks.push_back({std::span<double>(net.layers[l].bias), layer_offset + l});
    }
    return chunks;
}

inline std::vector<GradChunk> grad_chunks(const MlpGradients& grads, std::size_t layer_offset = 0) {
    std::vector<GradChunk> chunks;
    for (std::size_t l = 0; l < grads.weight.size(); ++l) {
        chunks.push_back({std::span<const double>(grads.weight[l].values), layer_offset + l});
        chunks.push_back({std::span<const double>(grads.bias[l]), layer_offset + l});
    }
    return chunks;
}

struct OptimizerState {
    std::size_t step = 0;
    std::size_t total_steps = 0;
    double lr0 = 1e-3;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;
    std::vector<double> first_moment;
    std::vector<double> second_moment;

    static OptimizerState init(std::size_t n_params, double lr0, std::size_t total_steps, double weight_decay = 0.0) {
        OptimizerState s;
        s.lr0 = lr0;
        s.total_steps = total_steps;
        s.weight_decay = weight_decay;
        s.first_moment.assign(n_params, 0.0);
        s.second_moment.assign(n_params, 0.0);
        return s;
    }
};

// lr0 * (1 + cos(pi * step / total_steps)) / 2
inline double cosine_lr(const OptimizerState& state) {
    if (state.total_steps == 0) throw DomainError("cosine_lr: total_steps must be positive");
    const double frac = static_cast<double>(state.step) / static_cast<double>(state.total_steps);
    return state.lr0 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
}

// Standard AdamW with bias correction and decoupled weight decay.
inline void adamw_step(OptimizerState& state, const std::vector<ParamChunk>& params, const std::vector<GradChunk>& grads) {
    if (state.step >= state.total_steps) throw DomainError("adamw_step: step budget exhausted");
    if (params.size() != grads.size()) throw InternalError("adamw_step: chunk count mismatch");

    std::size_t total = 0;
    for (const auto& p : params) total += p.values.size();
    if (total != state.first_moment.size()) throw InternalError("adamw_step: state size does not match parameters");

    for (std::size_t c = 0; c < grads.size(); ++c) {
        if (grads[c].values.size() != params[c].values.size()) throw InternalError("adamw_step: chunk shape mismatch");
        for (double g : grads[c].values) {
            if (!std::isfinite(g)) {
                throw DivergenceError("adamw_step: non-finite gradient in layer " + std::to_string(grads[c].layer_index));
            }
        }
    }

    const double lr = cosine_lr(state);
    const double t = static_cast<double>(state.step + 1);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);

    std::size_t offset = 0;
    for (std::size_t c = 0; c < params.size(); ++c) {
        double* p = params[c].values.data();
        const double* g = grads[c].values.data();
        double* m = state.first_moment.data() + offset;
        double* v = state.second_moment.data() + offset;
        const std::size_t n = params[c].values.size();
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps_adam);
            if (state.weight_decay != 0.0) p[i] -= lr * state.weight_decay * p[i];
        }
        offset += n;
    }
    ++state.step;
}

}  // namespace sbicm
