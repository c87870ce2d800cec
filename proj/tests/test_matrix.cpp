#include <catch2/catch_amalgamated.hpp>

#include "sbicm/matrix.hpp"
#include "sbicm/rng.hpp"

using namespace sbicm;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    Matrix m(r, c);
    for (auto& v : m.values) v = rng.normal();
    return m;
}

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < a.cols; ++p) acc += a(i, p) * b(p, j);
            c(i, j) = acc;
        }
    }
    return c;
}

}  // namespace

TEST_CASE("matmul matches the naive triple loop", "[matrix]") {
    Rng rng(11);
    const Matrix a = random_matrix(17, 9, rng);
    const Matrix b = random_matrix(9, 13, rng);
    const Matrix c = matmul(a, b);
    const Matrix ref = naive_matmul(a, b);
    for (std::size_t i = 0; i < c.values.size(); ++i) REQUIRE(c.values[i] == Catch::Approx(ref.values[i]).epsilon(1e-12));
}

TEST_CASE("transposed products agree with explicit transposes", "[matrix]") {
    Rng rng(12);
    const Matrix a = random_matrix(8, 5, rng);
    const Matrix b = random_matrix(7, 5, rng);
    const Matrix c = matmul_transB(a, b);  // a * b^T
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < b.rows; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < 5; ++p) acc += a(i, p) * b(j, p);
            REQUIRE(c(i, j) == Catch::Approx(acc).epsilon(1e-12));
        }
    }

    const Matrix d = random_matrix(6, 4, rng);
    const Matrix e = random_matrix(6, 3, rng);
    const Matrix f = matmul_transA(d, e);  // d^T * e
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < 6; ++p) acc += d(p, i) * e(p, j);
            REQUIRE(f(i, j) == Catch::Approx(acc).epsilon(1e-12));
        }
    }
}

TEST_CASE("shape mismatches throw", "[matrix]") {
    const Matrix a(2, 3), b(4, 2);
    REQUIRE_THROWS_AS(matmul(a, b), DimensionError);
}
