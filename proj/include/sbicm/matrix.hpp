#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "sbicm/errors.hpp"
#include "sbicm/threads.hpp"

namespace sbicm {

// Dense row-major matrix of 64-bit floats. All network weights, activations
// and sample sets live in this type.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return values[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }

    double* row(std::size_t i) { return values.data() + i * cols; }
    const double* row(std::size_t i) const { return values.data() + i * cols; }

    bool same_shape(const Matrix& other) const { return rows == other.rows && cols == other.cols; }

    bool all_finite() const {
        for (double v : values) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }
};

namespace detail {

inline std::size_t row_grain(std::size_t n_rows, std::size_t flops_per_row) {
    // Aim for ~1 Mflop chunks so dispatch overhead stays negligible.
    const std::size_t target = 1u << 20;
    std::size_t grain = flops_per_row == 0 ? n_rows : std::max<std::size_t>(1, target / std::max<std::size_t>(1, flops_per_row));
    return std::min(grain, std::max<std::size_t>(1, n_rows));
}

}  // namespace detail

// c = a (m x k) * b (k x n)
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw DimensionError("matmul: inner dimensions differ (" + std::to_string(a.cols) + " vs " + std::to_string(b.rows) + ")");
    }
    Matrix c(a.rows, b.cols);
    const std::size_t k = a.cols, n = b.cols;
    parallel_for(a.rows, detail::row_grain(a.rows, 2 * k * n), [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            double* ci = c.row(i);
            const double* ai = a.row(i);
            for (std::size_t p = 0; p < k; ++p) {
                const double aip = ai[p];
                const double* bp = b.row(p);
                for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
            }
        }
    });
    return c;
}

// c = a (m x k) * b^T where b is (n x k)
inline Matrix matmul_transB(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) {
        throw DimensionError("matmul_transB: inner dimensions differ");
    }
    Matrix c(a.rows, b.rows);
    const std::size_t k = a.cols, n = b.rows;
    parallel_for(a.rows, detail::row_grain(a.rows, 2 * k * n), [&](std::size_t i0, std::size_t i1) {
        for (std::size_t i = i0; i < i1; ++i) {
            const double* ai = a.row(i);
            double* ci = c.row(i);
            for (std::size_t j = 0; j < n; ++j) {
                const double* bj = b.row(j);
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
                ci[j] = acc;
            }
        }
    });
    return c;
}

// c = a^T (k x m -> m x k transposed) * b, i.e. a is (n x m), b is (n x k), c is (m x k).
// Reduction over rows of a/b runs in fixed index order for every output row,
// so the result is independent of the worker count.
inline Matrix matmul_transA(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows) {
        throw DimensionError("matmul_transA: outer dimensions differ");
    }
    Matrix c(a.cols, b.cols);
    const std::size_t m = a.cols, k = b.cols, n = a.rows;
    parallel_for(m, detail::row_grain(m, 2 * n * k), [&](std::size_t j0, std::size_t j1) {
        for (std::size_t i = 0; i < n; ++i) {
            const double* ai = a.row(i);
            const double* bi = b.row(i);
            for (std::size_t j = j0; j < j1; ++j) {
                const double aij = ai[j];
                double* cj = c.row(j);
                for (std::size_t p = 0; p < k; ++p) cj[p] += aij * bi[p];
            }
        }
    });
    return c;
}

inline void add_row_inplace(Matrix& m, const std::vector<double>& v) {
    if (m.cols != v.size()) throw DimensionError("add_row_inplace: width mismatch");
    for (std::size_t i = 0; i < m.rows; ++i) {
        double* r = m.row(i);
        for (std::size_t j = 0; j < m.cols; ++j) r[j] += v[j];
    }
}

inline std::vector<double> column_sums(const Matrix& m) {
    std::vector<double> s(m.cols, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double* r = m.row(i);
        for (std::size_t j = 0; j < m.cols; ++j) s[j] += r[j];
    }
    return s;
}

}  // namespace sbicm
