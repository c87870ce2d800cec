#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "sbicm/errors.hpp"
#include "sbicm/matrix.hpp"
#include "sbicm/mlp.hpp"

namespace sbicm {

// Exchangeable observation set: n_obs rows of obs_dim values.
struct ObservationSet {
    Matrix values;  // n_obs x obs_dim

    std::size_t n_obs() const { return values.rows; }
    std::size_t obs_dim() const { return values.cols; }
};

struct DeepSetConfig {
    MlpConfig inner;
    MlpConfig outer;
    std::size_t summary_dim = 0;

    void validate() const {
        inner.validate();
        outer.validate();
        if (inner.output_dim != outer.input_dim) throw ConfigError("DeepSetConfig: inner.output_dim must equal outer.input_dim");
        if (outer.output_dim != summary_dim) throw ConfigError("DeepSetConfig: outer.output_dim must equal summary_dim");
    }
};

struct DeepSetNetwork {
    DeepSetConfig config;
    MlpNetwork inner;
    MlpNetwork outer;

    std::size_t param_count() const { return inner.param_count() + outer.param_count(); }

    static DeepSetNetwork init(const DeepSetConfig& config, Rng& rng) {
        config.validate();
        DeepSetNetwork net;
        net.config = config;
        net.inner = MlpNetwork::init(config.inner, rng);
        net.outer = MlpNetwork::init(config.outer, rng);
        return net;
    }
};

struct DeepSetCache {
    const DeepSetNetwork* net = nullptr;
    std::size_t n_obs = 0;
    std::size_t batch = 0;
    MlpCache inner;
    MlpCache outer;
};

namespace detail {

// Mean over each set, summing in value-sorted order per column so that row
// permutations of a set produce bit-identical results.
inline Matrix mean_pool(const Matrix& rows, std::size_t n_obs) {
    const std::size_t batch = rows.rows / n_obs;
    Matrix pooled(batch, rows.cols);
    std::vector<double> bucket(n_obs);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < rows.cols; ++j) {
            for (std::size_t r = 0; r < n_obs; ++r) bucket[r] = rows(b * n_obs + r, j);
            std::sort(bucket.begin(), bucket.end());
            double acc = 0.0;
            for (double v : bucket) acc += v;
            pooled(b, j) = acc / static_cast<double>(n_obs);
        }
    }
    return pooled;
}

}  // namespace detail

// rows holds a batch of sets stacked vertically: (batch * n_obs) x obs_dim.
// Returns batch x summary_dim.
inline Matrix deepset_forward(const DeepSetNetwork& net, const Matrix& rows, std::size_t n_obs, bool train_mode,
                              std::uint64_t rng_seed, DeepSetCache* cache = nullptr) {
    if (n_obs == 0 || rows.rows == 0) throw DomainError("deepset_forward: empty observation set");
    if (rows.rows % n_obs != 0) throw DimensionError("deepset_forward: row count is not a multiple of n_obs");
    if (rows.cols != net.config.inner.input_dim) throw DimensionError("deepset_forward: obs_dim mismatch");

    if (cache) {
        cache->net = &net;
        cache->n_obs = n_obs;
        cache->batch = rows.rows / n_obs;
    }
    Matrix embedded = mlp_forward(net.inner, rows, train_mode, rng_seed, cache ? &cache->inner : nullptr);
    Matrix pooled = detail::mean_pool(embedded, n_obs);
    return mlp_forward(net.outer, pooled, train_mode, detail::mix_seed(rng_seed, 0x6F75746572ULL),
                       cache ? &cache->outer : nullptr);
}

struct DeepSetGradients {
    MlpGradients inner;
    MlpGradients outer;
};

// Gradients for both sub-networks; the mean pool fans out as 1/n_obs.
inline DeepSetGradients deepset_backward(const DeepSetNetwork& net, const DeepSetCache& cache, const Matrix& summary_grad) {
    if (cache.net != &net) throw InternalError("deepset_backward: cache does not belong to this network");
    DeepSetGradients grads;
    grads.outer = mlp_backward(net.outer, cache.outer, summary_grad);

    const Matrix& pooled_grad = grads.outer.input;  // batch x inner.output_dim
    Matrix embedded_grad(cache.batch * cache.n_obs, net.config.inner.output_dim);
    const double inv_n = 1.0 / static_cast<double>(cache.n_obs);
    for (std::size_t b = 0; b < cache.batch; ++b) {
        for (std::size_t r = 0; r < cache.n_obs; ++r) {
            double* dst = embedded_grad.row(b * cache.n_obs + r);
            const double* src = pooled_grad.row(b);
            for (std::size_t j = 0; j < embedded_grad.cols; ++j) dst[j] = src[j] * inv_n;
        }
    }
    grads.inner = mlp_backward(net.inner, cache.inner, embedded_grad);
    return grads;
}

inline double l2_penalty(const DeepSetNetwork& net) { return l2_penalty(net.inner) + l2_penalty(net.outer); }

}  // namespace sbicm
