#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "sbicm/deepset.hpp"
#include "sbicm/errors.hpp"
#include "sbicm/matrix.hpp"
#include "sbicm/mlp.hpp"
#include "sbicm/optimizer.hpp"
#include "sbicm/standardize.hpp"

namespace sbicm {

// Backbone + optional summary network + standardization: the trainable part
// shared by the consistency and flow-matching models. The backbone consumes
// rows of [theta_t | t | condition].
struct AmortizedNet {
    std::size_t theta_dim = 0;
    std::size_t n_obs = 1;
    std::size_t obs_dim = 0;
    MlpNetwork backbone;
    std::optional<DeepSetNetwork> summary;
    Standardization standardization;

    std::size_t cond_dim() const { return summary ? summary->config.summary_dim : n_obs * obs_dim; }

    std::size_t param_count() const { return backbone.param_count() + (summary ? summary->param_count() : 0); }

    void validate() const {
        if (theta_dim == 0 || obs_dim == 0 || n_obs == 0) throw ConfigError("AmortizedNet: zero dimensions");
        const std::size_t expected = theta_dim + 1 + cond_dim();
        if (backbone.config.input_dim != expected) {
            throw ConfigError("AmortizedNet: backbone input_dim must be theta_dim + 1 + cond_dim");
        }
        if (backbone.config.output_dim != theta_dim) {
            throw ConfigError("AmortizedNet: backbone output_dim must equal theta_dim");
        }
        if (summary && summary->config.inner.input_dim != obs_dim) {
            throw ConfigError("AmortizedNet: summary input_dim must equal obs_dim");
        }
        if (standardization.theta_mean.size() != theta_dim || standardization.x_mean.size() != obs_dim) {
            throw ConfigError("AmortizedNet: standardization dimensions mismatch");
        }
    }
};

inline std::vector<ParamChunk> param_chunks(AmortizedNet& net) {
    std::vector<ParamChunk> chunks = param_chunks(net.backbone, 0);
    if (net.summary) {
        const std::size_t nb = net.backbone.layers.size();
        auto inner = param_chunks(net.summary->inner, nb);
        auto outer = param_chunks(net.summary->outer, nb + net.summary->inner.layers.size());
        chunks.insert(chunks.end(), inner.begin(), inner.end());
        chunks.insert(chunks.end(), outer.begin(), outer.end());
    }
    return chunks;
}

struct AmortizedGradients {
    MlpGradients backbone;
    std::optional<DeepSetGradients> summary;
};

inline std::vector<GradChunk> grad_chunks(const AmortizedNet& net, const AmortizedGradients& grads) {
    std::vector<GradChunk> chunks = grad_chunks(grads.backbone, 0);
    if (grads.summary) {
        const std::size_t nb = net.backbone.layers.size();
        auto inner = grad_chunks(grads.summary->inner, nb);
        auto outer = grad_chunks(grads.summary->outer, nb + net.summary->inner.layers.size());
        chunks.insert(chunks.end(), inner.begin(), inner.end());
        chunks.insert(chunks.end(), outer.begin(), outer.end());
    }
    return chunks;
}

inline double l2_penalty(const AmortizedNet& net) {
    return l2_penalty(net.backbone) + (net.summary ? l2_penalty(*net.summary) : 0.0);
}

// Condition rows for a batch of observation sets (already standardized).
// With a summary network this is its output; otherwise the set rows are
// flattened record-major.
inline Matrix make_condition(const AmortizedNet& net, const Matrix& x_rows_std, bool train_mode, std::uint64_t seed,
                             DeepSetCache* cache = nullptr) {
    if (x_rows_std.rows % net.n_obs != 0) throw DimensionError("make_condition: row count not a multiple of n_obs");
    if (net.summary) {
        return deepset_forward(*net.summary, x_rows_std, net.n_obs, train_mode, seed, cache);
    }
    const std::size_t batch = x_rows_std.rows / net.n_obs;
    Matrix cond(batch, net.n_obs * net.obs_dim);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t r = 0; r < net.n_obs; ++r) {
            for (std::size_t j = 0; j < net.obs_dim; ++j) cond(b, r * net.obs_dim + j) = x_rows_std(b * net.n_obs + r, j);
        }
    }
    return cond;
}

// Condition row for one raw observation set, standardized first; used at
// sampling and evaluation time.
inline Matrix condition_for_observation(const AmortizedNet& net, const ObservationSet& x_obs) {
    if (x_obs.n_obs() != net.n_obs || x_obs.obs_dim() != net.obs_dim) {
        throw DimensionError("condition_for_observation: observation shape mismatch");
    }
    Matrix rows = standardize_obs(x_obs.values, net.standardization);
    return make_condition(net, rows, false, 0);
}

inline Matrix replicate_row(const Matrix& row, std::size_t n) {
    Matrix out(n, row.cols);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < row.cols; ++j) out(i, j) = row(0, j);
    }
    return out;
}

}  // namespace sbicm
