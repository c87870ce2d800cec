#include <catch2/catch_amalgamated.hpp>

#include "sbicm/mlp.hpp"
#include "support/fd.hpp"

using namespace sbicm;

namespace {

MlpConfig small_config(std::size_t in, std::vector<std::size_t> hidden, std::size_t out, Activation act,
                       double dropout = 0.0, double l2 = 0.0) {
    MlpConfig cfg;
    cfg.input_dim = in;
    cfg.hidden_widths = std::move(hidden);
    cfg.output_dim = out;
    cfg.activation = act;
    cfg.dropout_rate = dropout;
    cfg.l2_weight = l2;
    return cfg;
}

}  // namespace

TEST_CASE("identity single layer with relu passes positive input through", "[mlp]") {
    Rng rng(1);
    MlpNetwork net = MlpNetwork::init(small_config(3, {3}, 3, Activation::relu), rng);
    // hidden weight = identity, bias = 0; output layer = identity too
    for (auto& layer : net.layers) {
        layer.weight = Matrix(3, 3);
        for (std::size_t i = 0; i < 3; ++i) layer.weight(i, i) = 1.0;
        layer.bias.assign(3, 0.0);
    }
    Matrix input(2, 3);
    input.values = {0.5, 1.0, 2.5, 0.1, 3.0, 0.7};  // all positive, relu transparent
    const Matrix out = mlp_forward(net, input, false, 0);
    REQUIRE(out.values == input.values);
}

TEST_CASE("dropout disabled means train and eval agree", "[mlp]") {
    Rng rng(2);
    MlpNetwork net = MlpNetwork::init(small_config(4, {8, 8}, 2, Activation::silu, 0.0), rng);
    Matrix input(5, 4);
    for (auto& v : input.values) v = rng.normal();
    const Matrix train_out = mlp_forward(net, input, true, 77);
    const Matrix eval_out = mlp_forward(net, input, false, 77);
    REQUIRE(train_out.values == eval_out.values);
}

TEST_CASE("forward is bit-identical across repeated calls with a fixed seed", "[mlp]") {
    Rng rng(3);
    MlpNetwork net = MlpNetwork::init(small_config(4, {16}, 3, Activation::silu, 0.3), rng);
    Matrix input(6, 4);
    for (auto& v : input.values) v = rng.normal();
    const Matrix a = mlp_forward(net, input, true, 123);
    const Matrix b = mlp_forward(net, input, true, 123);
    REQUIRE(a.values == b.values);
    const Matrix c = mlp_forward(net, input, true, 124);
    REQUIRE(a.values != c.values);  // different seed, different masks
}

TEST_CASE("3-2-1 net matches hand-unrolled arithmetic", "[mlp]") {
    Rng rng(4);
    MlpNetwork net = MlpNetwork::init(small_config(3, {2}, 1, Activation::relu), rng);
    net.layers[0].weight.values = {0.2, -0.4, 0.7, 0.1, -0.3, 0.9};  // 3x2
    net.layers[0].bias = {0.05, -0.02};
    net.layers[1].weight.values = {1.5, -2.0};  // 2x1
    net.layers[1].bias = {0.3};

    Matrix input(1, 3);
    input.values = {0.5, -0.3, 1.1};
    const Matrix out = mlp_forward(net, input, false, 0);

    // hand computation: two matmuls and a relu
    const double h0 = 0.5 * 0.2 + (-0.3) * 0.7 + 1.1 * (-0.3) + 0.05;
    const double h1 = 0.5 * (-0.4) + (-0.3) * 0.1 + 1.1 * 0.9 + (-0.02);
    const double a0 = h0 > 0 ? h0 : 0.0;
    const double a1 = h1 > 0 ? h1 : 0.0;
    const double expected = a0 * 1.5 + a1 * (-2.0) + 0.3;
    REQUIRE(out(0, 0) == Catch::Approx(expected).epsilon(1e-15));
}

TEST_CASE("zero output gradient with zero l2 gives zero gradients", "[mlp]") {
    Rng rng(5);
    MlpNetwork net = MlpNetwork::init(small_config(3, {4}, 2, Activation::silu), rng);
    Matrix input(3, 3);
    for (auto& v : input.values) v = rng.normal();
    MlpCache cache;
    mlp_forward(net, input, false, 0, &cache);
    const MlpGradients grads = mlp_backward(net, cache, Matrix(3, 2, 0.0));
    for (const auto& w : grads.weight) {
        for (double v : w.values) REQUIRE(v == 0.0);
    }
    for (const auto& b : grads.bias) {
        for (double v : b) REQUIRE(v == 0.0);
    }
}

TEST_CASE("linear chain rule on a scalar path", "[mlp]") {
    // 1-1-1 net, identity-ish: loss = output, so d loss / d w_out = hidden
    // activation and d loss / d w_in = w_out * act'(pre) * input.
    Rng rng(6);
    MlpNetwork net = MlpNetwork::init(small_config(1, {1}, 1, Activation::relu), rng);
    net.layers[0].weight.values = {1.0};
    net.layers[0].bias = {0.0};
    net.layers[1].weight.values = {1.0};
    net.layers[1].bias = {0.0};
    Matrix input(1, 1);
    input.values = {0.8};
    MlpCache cache;
    mlp_forward(net, input, false, 0, &cache);
    const MlpGradients grads = mlp_backward(net, cache, Matrix(1, 1, 1.0));
    REQUIRE(grads.weight[0](0, 0) == Catch::Approx(0.8));  // gradient of the weight equals the input value
    REQUIRE(grads.weight[1](0, 0) == Catch::Approx(0.8));
    REQUIRE(grads.input(0, 0) == Catch::Approx(1.0));
}

TEST_CASE("gradients match central finite differences on random nets", "[mlp]") {
    Rng rng(7);
    for (int trial = 0; trial < 8; ++trial) {
        const std::size_t n_hidden = 1 + static_cast<std::size_t>(rng.index(3));
        std::vector<std::size_t> hidden(n_hidden);
        for (auto& h : hidden) h = 2 + rng.index(6);
        const Activation act = trial % 2 == 0 ? Activation::silu : Activation::relu;
        const double l2 = trial % 3 == 0 ? 0.01 : 0.0;
        MlpNetwork net = MlpNetwork::init(small_config(3, hidden, 2, act, 0.0, l2), rng);
        Matrix input(4, 3);
        for (auto& v : input.values) v = rng.normal();
        Matrix target(4, 2);
        for (auto& v : target.values) v = rng.normal();

        auto loss_fn = [&]() {
            const Matrix out = mlp_forward(net, input, false, 0);
            double acc = 0.0;
            for (std::size_t i = 0; i < out.values.size(); ++i) {
                const double d = out.values[i] - target.values[i];
                acc += 0.5 * d * d;
            }
            return acc + l2_penalty(net);
        };

        MlpCache cache;
        const Matrix out = mlp_forward(net, input, false, 0, &cache);
        Matrix out_grad(4, 2);
        for (std::size_t i = 0; i < out.values.size(); ++i) out_grad.values[i] = out.values[i] - target.values[i];
        const MlpGradients grads = mlp_backward(net, cache, out_grad);

        const auto report = testing::check_gradients(param_chunks(net), loss_fn, grad_chunks(grads));
        INFO("trial " << trial << " checked " << report.n_checked);
        REQUIRE(report.max_rel_err < 1e-4);
    }
}

TEST_CASE("gradients through dropout match finite differences for a fixed seed", "[mlp]") {
    Rng rng(8);
    MlpNetwork net = MlpNetwork::init(small_config(3, {6, 5}, 2, Activation::silu, 0.4), rng);
    Matrix input(4, 3);
    for (auto& v : input.values) v = rng.normal();
    const std::uint64_t seed = 321;

    auto loss_fn = [&]() {
        const Matrix out = mlp_forward(net, input, true, seed);
        double acc = 0.0;
        for (double v : out.values) acc += v;
        return acc;
    };
    MlpCache cache;
    mlp_forward(net, input, true, seed, &cache);
    const MlpGradients grads = mlp_backward(net, cache, Matrix(4, 2, 1.0));
    const auto report = testing::check_gradients(param_chunks(net), loss_fn, grad_chunks(grads));
    REQUIRE(report.max_rel_err < 1e-4);
}

TEST_CASE("l2 term shifts loss by l2/2 sum phi^2 and gradients by l2 phi", "[mlp]") {
    Rng rng(9);
    const double l2 = 0.37;
    MlpNetwork with_l2 = MlpNetwork::init(small_config(3, {5}, 2, Activation::silu, 0.0, l2), rng);
    MlpNetwork without = with_l2;
    without.config.l2_weight = 0.0;

    double sum_sq = 0.0;
    for (const auto& layer : with_l2.layers) {
        for (double w : layer.weight.values) sum_sq += w * w;
        for (double b : layer.bias) sum_sq += b * b;
    }
    REQUIRE(l2_penalty(with_l2) == Catch::Approx(0.5 * l2 * sum_sq).epsilon(1e-12));
    REQUIRE(l2_penalty(without) == 0.0);

    Matrix input(2, 3);
    for (auto& v : input.values) v = rng.normal();
    MlpCache c1, c2;
    mlp_forward(with_l2, input, false, 0, &c1);
    mlp_forward(without, input, false, 0, &c2);
    const Matrix og(2, 2, 1.0);
    const MlpGradients g1 = mlp_backward(with_l2, c1, og);
    const MlpGradients g2 = mlp_backward(without, c2, og);
    for (std::size_t l = 0; l < g1.weight.size(); ++l) {
        for (std::size_t i = 0; i < g1.weight[l].values.size(); ++i) {
            const double expected = g2.weight[l].values[i] + l2 * with_l2.layers[l].weight.values[i];
            REQUIRE(g1.weight[l].values[i] == Catch::Approx(expected).margin(1e-12));
        }
    }
}

TEST_CASE("shape mismatch and stale caches are rejected", "[mlp]") {
    Rng rng(10);
    MlpNetwork net = MlpNetwork::init(small_config(3, {4}, 2, Activation::silu), rng);
    REQUIRE_THROWS_AS(mlp_forward(net, Matrix(2, 5), false, 0), DimensionError);

    MlpNetwork other = MlpNetwork::init(small_config(3, {4}, 2, Activation::silu), rng);
    MlpCache cache;
    mlp_forward(net, Matrix(2, 3, 0.5), false, 0, &cache);
    REQUIRE_THROWS_AS(mlp_backward(other, cache, Matrix(2, 2, 1.0)), InternalError);
}
