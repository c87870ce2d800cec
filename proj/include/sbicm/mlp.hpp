#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sbicm/errors.hpp"
#include "sbicm/matrix.hpp"
#include "sbicm/rng.hpp"

namespace sbicm {

enum class Activation { relu, silu };

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "silu"; }

inline Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "silu") return Activation::silu;
    throw ConfigError("unknown activation: " + s);
}

struct MlpConfig {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_widths;
    std::size_t output_dim = 0;
    Activation activation = Activation::silu;
    double dropout_rate = 0.0;
    double l2_weight = 0.0;

    void validate() const {
        if (input_dim == 0 || output_dim == 0) throw ConfigError("MlpConfig: zero input/output dim");
        if (hidden_widths.empty()) throw ConfigError("MlpConfig: hidden_widths must be nonempty");
        for (std::size_t w : hidden_widths) {
            if (w == 0) throw ConfigError("MlpConfig: zero hidden width");
        }
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("MlpConfig: dropout_rate must be in [0,1)");
        if (l2_weight < 0.0) throw ConfigError("MlpConfig: l2_weight must be nonnegative");
    }

    // Sizes of the full layer chain: input, hidden..., output.
    std::vector<std::size_t> layer_sizes() const {
        std::vector<std::size_t> s;
        s.push_back(input_dim);
        s.insert(s.end(), hidden_widths.begin(), hidden_widths.end());
        s.push_back(output_dim);
        return s;
    }
};

struct MlpNetwork {
    MlpConfig config;

    struct Layer {
        Matrix weight;             // (in x out)
        std::vector<double> bias;  // (out)
    };
    std::vector<Layer> layers;

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.weight.values.size() + l.bias.size();
        return n;
    }

    // Kaiming-style fan-in uniform init, zero biases.
    static MlpNetwork init(const MlpConfig& config, Rng& rng) {
        config.validate();
        MlpNetwork net;
        net.config = config;
        const auto sizes = config.layer_sizes();
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
            Layer layer;
            layer.weight = Matrix(sizes[l], sizes[l + 1]);
            layer.bias.assign(sizes[l + 1], 0.0);
            const double bound = std::sqrt(6.0 / static_cast<double>(sizes[l]));
            for (double& w : layer.weight.values) w = rng.uniform(-bound, bound);
            net.layers.push_back(std::move(layer));
        }
        return net;
    }
};

// Everything the backward pass needs from one forward call.
struct MlpCache {
    const MlpNetwork* net = nullptr;
    bool train_mode = false;
    Matrix input;
    std::vector<Matrix> hidden;  // post-activation (and post-dropout) per hidden layer
    std::vector<Matrix> pre;     // pre-activation per hidden layer
    std::vector<Matrix> mask;    // dropout masks (already scaled by 1/(1-p)); empty when unused
};

namespace detail {

inline double silu(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return x * s;
}

inline double silu_grad(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

inline void apply_activation(Matrix& m, const Matrix& pre, Activation act) {
    if (act == Activation::relu) {
        for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = pre.values[i] > 0.0 ? pre.values[i] : 0.0;
    } else {
        for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = silu(pre.values[i]);
    }
}

// Inverted dropout; masks depend only on (seed, layer, row), never on the
// values or on how the batch is chunked across workers.
inline Matrix dropout_mask(std::uint64_t seed, std::size_t layer, std::size_t rows, std::size_t cols, double rate) {
    Matrix mask(rows, cols);
    const double keep = 1.0 - rate;
    const double scale = 1.0 / keep;
    for (std::size_t i = 0; i < rows; ++i) {
        Rng row_rng = Rng::from(detail::mix_seed(seed, 0x6D726F7064ULL + layer), i);
        double* r = mask.row(i);
        for (std::size_t j = 0; j < cols; ++j) r[j] = row_rng.uniform() < keep ? scale : 0.0;
    }
    return mask;
}

}  // namespace detail

// Batched forward pass; rows of `input` are independent samples.
// Dropout fires only in train_mode with a positive rate.
inline Matrix mlp_forward(const MlpNetwork& net, const Matrix& input, bool train_mode, std::uint64_t rng_seed,
                          MlpCache* cache = nullptr) {
    if (input.cols != net.config.input_dim) {
        throw DimensionError("mlp_forward: input has " + std::to_string(input.cols) + " columns, expected " +
                             std::to_string(net.config.input_dim));
    }
    const std::size_t n_hidden = net.config.hidden_widths.size();
    const bool use_dropout = train_mode && net.config.dropout_rate > 0.0;

    if (cache) {
        cache->net = &net;
        cache->train_mode = train_mode;
        cache->input = input;
        cache->hidden.clear();
        cache->pre.clear();
        cache->mask.clear();
    }

    Matrix cur = input;
    for (std::size_t l = 0; l < n_hidden; ++l) {
        Matrix pre = matmul(cur, net.layers[l].weight);
        add_row_inplace(pre, net.layers[l].bias);
        Matrix act(pre.rows, pre.cols);
        detail::apply_activation(act, pre, net.config.activation);
        if (use_dropout) {
            Matrix mask = detail::dropout_mask(rng_seed, l, act.rows, act.cols, net.config.dropout_rate);
            for (std::size_t i = 0; i < act.values.size(); ++i) act.values[i] *= mask.values[i];
            if (cache) cache->mask.push_back(std::move(mask));
        }
        if (cache) {
            cache->pre.push_back(std::move(pre));
            cache->hidden.push_back(act);
        }
        cur = std::move(act);
    }
    Matrix out = matmul(cur, net.layers[n_hidden].weight);
    add_row_inplace(out, net.layers[n_hidden].bias);
    return out;
}

struct MlpGradients {
    std::vector<Matrix> weight;             // per layer, shape-matched
    std::vector<std::vector<double>> bias;  // per layer
    Matrix input;                           // d loss / d input, same shape as forward input
};

// Exact reverse-mode gradients for the fixed MLP topology. Adds the L2 term
// l2_weight * phi to every weight and bias gradient.
inline MlpGradients mlp_backward(const MlpNetwork& net, const MlpCache& cache, const Matrix& output_grad) {
    if (cache.net != &net) throw InternalError("mlp_backward: cache does not belong to this network");
    if (output_grad.rows != cache.input.rows || output_grad.cols != net.config.output_dim) {
        throw InternalError("mlp_backward: output_grad shape mismatch");
    }
    const std::size_t n_hidden = net.config.hidden_widths.size();
    const bool use_dropout = cache.train_mode && net.config.dropout_rate > 0.0;

    MlpGradients grads;
    grads.weight.resize(n_hidden + 1);
    grads.bias.resize(n_hidden + 1);

    Matrix delta = output_grad;  // gradient at the current layer's output
    for (std::size_t l = n_hidden + 1; l-- > 0;) {
        const Matrix& layer_input = (l == 0) ? cache.input : cache.hidden[l - 1];
        grads.weight[l] = matmul_transA(layer_input, delta);
        grads.bias[l] = column_sums(delta);
        Matrix input_grad = matmul_transB(delta, net.layers[l].weight);
        if (l > 0) {
            // Through dropout and the activation of hidden layer l-1.
            if (use_dropout) {
                const Matrix& mask = cache.mask[l - 1];
                for (std::size_t i = 0; i < input_grad.values.size(); ++i) input_grad.values[i] *= mask.values[i];
            }
            const Matrix& pre = cache.pre[l - 1];
            if (net.config.activation == Activation::relu) {
                for (std::size_t i = 0; i < input_grad.values.size(); ++i) {
                    if (pre.values[i] <= 0.0) input_grad.values[i] = 0.0;
                }
            } else {
                for (std::size_t i = 0; i < input_grad.values.size(); ++i) {
                    input_grad.values[i] *= detail::silu_grad(pre.values[i]);
                }
            }
        }
        delta = std::move(input_grad);
    }
    grads.input = std::move(delta);

    if (net.config.l2_weight != 0.0) {
        const double lw = net.config.l2_weight;
        for (std::size_t l = 0; l <= n_hidden; ++l) {
            for (std::size_t i = 0; i < grads.weight[l].values.size(); ++i) {
                grads.weight[l].values[i] += lw * net.layers[l].weight.values[i];
            }
            for (std::size_t i = 0; i < grads.bias[l].size(); ++i) {
                grads.bias[l][i] += lw * net.layers[l].bias[i];
            }
        }
    }
    return grads;
}

// 0.5 * l2_weight * sum(phi^2); the term the L2 gradient corresponds to.
inline double l2_penalty(const MlpNetwork& net) {
    if (net.config.l2_weight == 0.0) return 0.0;
    double acc = 0.0;
    for (const auto& layer : net.layers) {
        for (double w : layer.weight.values) acc += w * w;
        for (double b : layer.bias) acc += b * b;
    }
    return 0.5 * net.config.l2_weight * acc;
}

}  // namespace sbicm
