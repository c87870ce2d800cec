#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "sbicm/errors.hpp"
#include "sbicm/matrix.hpp"
#include "sbicm/mlp.hpp"
#include "sbicm/optimizer.hpp"
#include "sbicm/rng.hpp"
#include "sbicm/simulators.hpp"
#include "sbicm/stats.hpp"
#include "sbicm/threads.hpp"

namespace sbicm {

// sqrt of the mean squared deviation over draws and dimensions.
inline double rmse(const Matrix& draws, std::span<const double> theta_star) {
    if (draws.cols != theta_star.size()) throw DimensionError("rmse: dimension mismatch");
    if (draws.rows == 0) throw DomainError("rmse: no draws");
    double acc = 0.0;
    for (std::size_t i = 0; i < draws.rows; ++i) {
        const double* r = draws.row(i);
        for (std::size_t j = 0; j < draws.cols; ++j) {
            const double d = r[j] - theta_star[j];
            acc += d * d;
        }
    }
    return std::sqrt(acc / static_cast<double>(draws.rows * draws.cols));
}

namespace detail {

inline double sq_dist(const double* a, const double* b, std::size_t d) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double diff = a[j] - b[j];
        acc += diff * diff;
    }
    return acc;
}

}  // namespace detail

// Median of pairwise Euclidean distances of the pooled rows of a and b
// (the median bandwidth heuristic).
inline double median_pairwise_distance(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) throw DimensionError("median_pairwise_distance: dimension mismatch");
    const std::size_t n = a.rows + b.rows, d = a.cols;
    if (n < 2) throw DomainError("median_pairwise_distance: need at least two rows");
    auto row_of = [&](std::size_t i) { return i < a.rows ? a.row(i) : b.row(i - a.rows); };
    std::vector<double> sq;
    sq.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i) {
        const double* ri = row_of(i);
        for (std::size_t j = i + 1; j < n; ++j) sq.push_back(detail::sq_dist(ri, row_of(j), d));
    }
    const std::size_t mid = sq.size() / 2;
    std::nth_element(sq.begin(), sq.begin() + mid, sq.end());
    double hi = sq[mid];
    if (sq.size() % 2 == 0) {
        std::nth_element(sq.begin(), sq.begin() + (mid - 1), sq.begin() + mid);
        return 0.5 * (std::sqrt(sq[mid - 1]) + std::sqrt(hi));
    }
    return std::sqrt(hi);
}

// Unbiased U-statistic estimate of the squared MMD with Gaussian kernel
// k(u, v) = exp(-||u - v||^2 / (2 h^2)). Slightly negative values are
// expected under the null; callers should not clamp unless aggregating.
inline double mmd_squared(const Matrix& a, const Matrix& b, double bandwidth) {
    if (a.cols != b.cols) throw DimensionError("mmd_squared: dimension mismatch");
    if (a.rows < 2 || b.rows < 2) throw DomainError("mmd_squared: need at least two rows per sample");
    const double gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    const std::size_t m = a.rows, n = b.rows, d = a.cols;

    // Per-row partial sums accumulated in fixed order keep the result
    // independent of the worker count.
    std::vector<double> aa_part(m, 0.0), bb_part(n, 0.0), ab_part(m, 0.0);
    parallel_for(m, 64, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            const double* ri = a.row(i);
            double acc = 0.0;
            for (std::size_t j = i + 1; j < m; ++j) acc += std::exp(-gamma * detail::sq_dist(ri, a.row(j), d));
            aa_part[i] = acc;
            double acc_ab = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc_ab += std::exp(-gamma * detail::sq_dist(ri, b.row(j), d));
            ab_part[i] = acc_ab;
        }
    });
    parallel_for(n, 64, [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            const double* ri = b.row(i);
            double acc = 0.0;
            for (std::size_t j = i + 1; j < n; ++j) acc += std::exp(-gamma * detail::sq_dist(ri, b.row(j), d));
            bb_part[i] = acc;
        }
    });
    double aa = 0.0, bb = 0.0, ab = 0.0;
    for (double v : aa_part) aa += v;
    for (double v : bb_part) bb += v;
    for (double v : ab_part) ab += v;

    const double md = static_cast<double>(m), nd = static_cast<double>(n);
    return 2.0 * aa / (md * (md - 1.0)) + 2.0 * bb / (nd * (nd - 1.0)) - 2.0 * ab / (md * nd);
}

// Biased V-statistic variant (includes the diagonal); exactly zero when the
// two arrays are identical.
inline double mmd_squared_biased(const Matrix& a, const Matrix& b, double bandwidth) {
    if (a.cols != b.cols) throw DimensionError("mmd_squared_biased: dimension mismatch");
    if (a.rows == 0 || b.rows == 0) throw DomainError("mmd_squared_biased: empty sample");
    const double gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    const std::size_t m = a.rows, n = b.rows, d = a.cols;
    double aa = 0.0, bb = 0.0, ab = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) aa += std::exp(-gamma * detail::sq_dist(a.row(i), a.row(j), d));
        for (std::size_t j = 0; j < n; ++j) ab += std::exp(-gamma * detail::sq_dist(a.row(i), b.row(j), d));
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) bb += std::exp(-gamma * detail::sq_dist(b.row(i), b.row(j), d));
    }
    const double md = static_cast<double>(m), nd = static_cast<double>(n);
    return aa / (md * md) + bb / (nd * nd) - 2.0 * ab / (md * nd);
}

inline double mmd_squared(const Matrix& a, const Matrix& b) {
    return mmd_squared(a, b, median_pairwise_distance(a, b));
}

// Classifier two-sample test configuration; the defaults are fixed for
// determinism and exposed for the oracle tests.
struct C2stConfig {
    std::vector<std::size_t> hidden_widths = {64, 64};
    std::size_t folds = 5;
    std::size_t max_epochs = 60;
    std::size_t patience = 6;
    std::size_t batch_size = 128;
    double lr = 1e-3;
    double val_fraction = 0.2;
};

namespace detail {

struct PreparedC2st {
    Matrix features;             // all rows, z-scored, degenerate columns dropped
    std::vector<double> labels;  // 0 for a, 1 for b
};

inline PreparedC2st prepare_c2st(const Matrix& a, const Matrix& b) {
    const std::size_t n = a.rows + b.rows, d = a.cols;
    std::vector<double> mu(d, 0.0), sd(d, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < d; ++j) mu[j] += a(i, j);
    }
    for (std::size_t i = 0; i < b.rows; ++i) {
        for (std::size_t j = 0; j < d; ++j) mu[j] += b(i, j);
    }
    for (double& v : mu) v /= static_cast<double>(n);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < d; ++j) sd[j] += (a(i, j) - mu[j]) * (a(i, j) - mu[j]);
    }
    for (std::size_t i = 0; i < b.rows; ++i) {
        for (std::size_t j = 0; j < d; ++j) sd[j] += (b(i, j) - mu[j]) * (b(i, j) - mu[j]);
    }
    for (double& v : sd) v = std::sqrt(v / static_cast<double>(n));

    std::vector<std::size_t> keep;
    for (std::size_t j = 0; j < d; ++j) {
        if (sd[j] > 1e-12) keep.push_back(j);
    }
    if (keep.empty()) throw DomainError("c2st: every feature is degenerate");

    PreparedC2st prep;
    prep.features = Matrix(n, keep.size());
    prep.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const bool from_b = i >= a.rows;
        const double* src = from_b ? b.row(i - a.rows) : a.row(i);
        prep.labels[i] = from_b ? 1.0 : 0.0;
        for (std::size_t c = 0; c < keep.size(); ++c) {
            prep.features(i, c) = (src[keep[c]] - mu[keep[c]]) / sd[keep[c]];
        }
    }
    return prep;
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace detail

// Held-out accuracy of an MLP classifier separating a from b, averaged over
// stratified folds; each fold early-stops on a validation split carved from
// its training part. 0.5 means the samples are indistinguishable.
inline double c2st(const Matrix& a, const Matrix& b, std::uint64_t seed, const C2stConfig& cfg = {}) {
    if (a.rows != b.rows) throw DomainError("c2st: need equal sample counts from each source");
    if (a.rows < cfg.folds * 2) throw DomainError("c2st: too few samples for the fold count");
    const detail::PreparedC2st prep = detail::prepare_c2st(a, b);
    const std::size_t per_class = a.rows;

    // Stratified fold assignment from a seeded shuffle of each class.
    Rng shuffle_rng = Rng::from(seed, 0xC257);
    std::vector<std::size_t> order_a(per_class), order_b(per_class);
    std::iota(order_a.begin(), order_a.end(), std::size_t{0});
    std::iota(order_b.begin(), order_b.end(), per_class);
    for (std::size_t i = per_class; i > 1; --i) std::swap(order_a[i - 1], order_a[shuffle_rng.index(i)]);
    for (std::size_t i = per_class; i > 1; --i) std::swap(order_b[i - 1], order_b[shuffle_rng.index(i)]);

    double acc_sum = 0.0;
    for (std::size_t fold = 0; fold < cfg.folds; ++fold) {
        std::vector<std::size_t> test_idx, pool_a, pool_b;
        for (std::size_t i = 0; i < per_class; ++i) {
            (i % cfg.folds == fold ? test_idx : pool_a).push_back(order_a[i]);
            (i % cfg.folds == fold ? test_idx : pool_b).push_back(order_b[i]);
        }
        // Stratified validation split from the head of each shuffled pool.
        const std::size_t val_a = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.val_fraction * pool_a.size()));
        const std::size_t val_b = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.val_fraction * pool_b.size()));
        std::vector<std::size_t> val_idx(pool_a.begin(), pool_a.begin() + val_a);
        val_idx.insert(val_idx.end(), pool_b.begin(), pool_b.begin() + val_b);
        std::vector<std::size_t> fit_idx(pool_a.begin() + val_a, pool_a.end());
        fit_idx.insert(fit_idx.end(), pool_b.begin() + val_b, pool_b.end());

        MlpConfig net_cfg;
        net_cfg.input_dim = prep.features.cols;
        net_cfg.hidden_widths = cfg.hidden_widths;
        net_cfg.output_dim = 1;
        net_cfg.activation = Activation::relu;
        Rng init_rng = Rng::from(seed, 100 + fold);
        MlpNetwork net = MlpNetwork::init(net_cfg, init_rng);
        const std::size_t steps_per_epoch = (fit_idx.size() + cfg.batch_size - 1) / cfg.batch_size;
        OptimizerState opt = OptimizerState::init(net.param_count(), cfg.lr, cfg.max_epochs * steps_per_epoch);

        auto val_loss = [&](const MlpNetwork& model) {
            Matrix input(val_idx.size(), prep.features.cols);
            for (std::size_t r = 0; r < val_idx.size(); ++r) {
                for (std::size_t c = 0; c < input.cols; ++c) input(r, c) = prep.features(val_idx[r], c);
            }
            const Matrix logits = mlp_forward(model, input, false, 0);
            double loss = 0.0;
            for (std::size_t r = 0; r < val_idx.size(); ++r) {
                loss += detail::softplus(logits(r, 0)) - prep.labels[val_idx[r]] * logits(r, 0);
            }
            return loss / static_cast<double>(val_idx.size());
        };

        MlpNetwork best = net;
        double best_loss = val_loss(net);
        std::size_t since_best = 0;
        Rng epoch_rng = Rng::from(seed, 200 + fold);
        for (std::size_t epoch = 0; epoch < cfg.max_epochs && since_best <= cfg.patience; ++epoch) {
            for (std::size_t i = fit_idx.size(); i > 1; --i) std::swap(fit_idx[i - 1], fit_idx[epoch_rng.index(i)]);
            for (std::size_t start = 0; start < fit_idx.size(); start += cfg.batch_size) {
                const std::size_t stop = std::min(start + cfg.batch_size, fit_idx.size());
                Matrix input(stop - start, prep.features.cols);
                for (std::size_t r = start; r < stop; ++r) {
                    for (std::size_t c = 0; c < input.cols; ++c) input(r - start, c) = prep.features(fit_idx[r], c);
                }
                MlpCache cache;
                const Matrix logits = mlp_forward(net, input, true, epoch_rng.next_u64(), &cache);
                Matrix grad(input.rows, 1);
                for (std::size_t r = 0; r < input.rows; ++r) {
                    const double sigma = 1.0 / (1.0 + std::exp(-logits(r, 0)));
                    grad(r, 0) = (sigma - prep.labels[fit_idx[start + r]]) / static_cast<double>(input.rows);
                }
                const MlpGradients grads = mlp_backward(net, cache, grad);
                adamw_step(opt, param_chunks(net), grad_chunks(grads));
            }
            const double loss = val_loss(net);
            if (loss < best_loss - 1e-6) {
                best_loss = loss;
                best = net;
                since_best = 0;
            } else {
                ++since_best;
            }
        }

        Matrix input(test_idx.size(), prep.features.cols);
        for (std::size_t r = 0; r < test_idx.size(); ++r) {
            for (std::size_t c = 0; c < input.cols; ++c) input(r, c) = prep.features(test_idx[r], c);
        }
        const Matrix logits = mlp_forward(best, input, false, 0);
        std::size_t correct = 0;
        for (std::size_t r = 0; r < test_idx.size(); ++r) {
            const double predicted = logits(r, 0) > 0.0 ? 1.0 : 0.0;
            if (predicted == prep.labels[test_idx[r]]) ++correct;
        }
        acc_sum += static_cast<double>(correct) / static_cast<double>(test_idx.size());
    }
    return acc_sum / static_cast<double>(cfg.folds);
}

// Simulation-based calibration via empirical coverage of central credible
// intervals at 20 linearly spaced quantiles.
struct SbcResult {
    std::vector<double> quantiles;    // 20 values j/21
    Matrix coverage;                  // 20 x D empirical coverage
    std::vector<double> ece_per_dim;  // median over quantiles of |coverage - nominal|
    double max_ece = 0.0;
    bool low_draw_warning = false;  // S < 100: poor rank resolution
};

using PosteriorSampler = std::function<Matrix(const ObservationSet&, std::size_t, std::uint64_t)>;
using PriorPredictive = std::function<SimulationRecord(Rng&)>;

inline SbcResult sbc_ece(const PosteriorSampler& sampler, const PriorPredictive& prior_predictive, std::size_t theta_dim,
                         std::size_t n_sbc, std::size_t n_draws, Rng& rng) {
    if (n_sbc == 0 || n_draws == 0) throw DomainError("sbc_ece: need positive n_sbc and draw count");
    constexpr std::size_t n_q = 20;
    SbcResult result;
    result.low_draw_warning = n_draws < 100;
    result.quantiles.resize(n_q);
    for (std::size_t j = 0; j < n_q; ++j) result.quantiles[j] = static_cast<double>(j + 1) / 21.0;

    std::vector<SimulationRecord> instances;
    instances.reserve(n_sbc);
    for (std::size_t i = 0; i < n_sbc; ++i) instances.push_back(prior_predictive(rng));
    const std::uint64_t draw_seed = rng.next_u64();

    // covered[i] packs the indicator grid of instance i; summed in instance
    // order afterwards so the instance loop may run on any worker layout.
    std::vector<std::vector<unsigned char>> covered(n_sbc);
    parallel_for(n_sbc, 1, [&](std::size_t i0, std::size_t i1) {
        std::vector<double> column;
        for (std::size_t i = i0; i < i1; ++i) {
            const Matrix draws = sampler(instances[i].x, n_draws, detail::mix_seed(draw_seed, i));
            if (draws.cols != theta_dim) throw DimensionError("sbc_ece: sampler returned wrong dimension");
            covered[i].assign(n_q * theta_dim, 0);
            column.resize(draws.rows);
            for (std::size_t d = 0; d < theta_dim; ++d) {
                for (std::size_t r = 0; r < draws.rows; ++r) column[r] = draws(r, d);
                std::sort(column.begin(), column.end());
                for (std::size_t j = 0; j < n_q; ++j) {
                    const double q = result.quantiles[j];
                    const double lo = quantile_sorted(column, (1.0 - q) / 2.0);
                    const double hi = quantile_sorted(column, (1.0 + q) / 2.0);
                    const double truth = instances[i].theta[d];
                    if (truth >= lo && truth <= hi) covered[i][j * theta_dim + d] = 1;
                }
            }
        }
    });

    result.coverage = Matrix(n_q, theta_dim);
    for (std::size_t i = 0; i < n_sbc; ++i) {
        for (std::size_t j = 0; j < n_q * theta_dim; ++j) result.coverage.values[j] += covered[i][j];
    }
    for (double& v : result.coverage.values) v /= static_cast<double>(n_sbc);

    result.ece_per_dim.resize(theta_dim);
    for (std::size_t d = 0; d < theta_dim; ++d) {
        std::vector<double> errs(n_q);
        for (std::size_t j = 0; j < n_q; ++j) errs[j] = std::abs(result.coverage(j, d) - result.quantiles[j]);
        result.ece_per_dim[d] = median(errs);
    }
    result.max_ece = *std::max_element(result.ece_per_dim.begin(), result.ece_per_dim.end());
    return result;
}

}  // namespace sbicm
