#include "test_support.hpp"

#include <limits>

using namespace dbmpc;
using testsupport::max_abs_diff;
using testsupport::reference_multiply;

TEST_CASE("Mat constructors enforce shape and finiteness") {
    REQUIRE_THROWS_AS(Mat(0, 3), DimensionMismatch);
    REQUIRE_THROWS_AS(Mat(2, 2, {1.0, 2.0, 3.0}), DimensionMismatch);
    REQUIRE_THROWS_AS(Mat(1, 2, {1.0, std::numeric_limits<double>::quiet_NaN()}), NonFiniteEntry);
    REQUIRE_THROWS_AS(Mat(1, 1, {std::numeric_limits<double>::infinity()}), NonFiniteEntry);
    REQUIRE_THROWS_AS(Mat::from_rows({{1.0, 2.0}, {3.0}}), DimensionMismatch);

    const Mat m = Mat::from_rows({{1.0, 2.0}, {3.0, 4.0}});
    REQUIRE(m(1, 0) == 3.0);
    REQUIRE(m.transpose()(0, 1) == 3.0);
}

TEST_CASE("lu_solve identity and diagonal cases") {
    const Mat v = Mat::col_vec({3.0, -1.0, 0.5});
    REQUIRE(max_abs_diff(lu_solve(Mat::identity(3), v), v) == 0.0);

    const Mat a = Mat::from_rows({{2.0, 0.0}, {0.0, 4.0}});
    const Mat x = lu_solve(a, Mat::col_vec({2.0, 8.0}));
    REQUIRE(max_abs_diff(x, Mat::col_vec({1.0, 2.0})) < 1e-15);
}

TEST_CASE("lu_solve recovers a constructed solution on a well-conditioned 5x5") {
    SplitMix64 rng(11);
    const Mat a = testsupport::random_well_conditioned(rng, 5);
    const Mat x0 = random_vector(rng, 5);
    const Mat b = a * x0;
    const Mat x = lu_solve(a, b);
    REQUIRE(max_abs_diff(x, x0) < 1e-10);
    // residual bound from the contract
    REQUIRE((a * x - b).max_abs() <= 1e-10 * std::max(1.0, a.max_abs() * x.max_abs()));
}

TEST_CASE("lu_solve does not modify its input and rejects singular matrices") {
    const Mat a = Mat::from_rows({{1.0, 2.0}, {3.0, 4.0}});
    const Mat copy = a;
    (void)lu_solve(a, Mat::col_vec({1.0, 1.0}));
    REQUIRE(max_abs_diff(a, copy) == 0.0);

    REQUIRE_THROWS_AS(lu_solve(Mat::from_rows({{1.0, 1.0}, {1.0, 1.0}}), Mat::col_vec({1.0, 2.0})),
                      SingularMatrix);
    REQUIRE_THROWS_AS(lu_solve(Mat(3, 3), Mat::col_vec({0.0, 0.0, 0.0})), SingularMatrix);
}

TEST_CASE("lu_solve round trip over random sizes") {
    SplitMix64 rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng.index(8);
        const Mat a = testsupport::random_well_conditioned(rng, n);
        const Mat v = random_vector(rng, n);
        REQUIRE(max_abs_diff(lu_solve(a, a * v), v) < 1e-9);
    }
}

TEST_CASE("cholesky hand-checkable cases") {
    REQUIRE(max_abs_diff(cholesky(Mat::identity(2)), Mat::identity(2)) == 0.0);

    const Mat l = cholesky(Mat::from_rows({{4.0, 2.0}, {2.0, 2.0}}));
    REQUIRE(max_abs_diff(l, Mat::from_rows({{2.0, 0.0}, {1.0, 1.0}})) < 1e-15);

    const auto outcome = try_cholesky(Mat::from_rows({{1.0, 2.0}, {2.0, 1.0}}));
    REQUIRE_FALSE(outcome.ok());
    REQUIRE(outcome.failing_pivot == 1);
    REQUIRE_THROWS_AS(cholesky(Mat::from_rows({{1.0, 2.0}, {2.0, 1.0}})),
                      PositiveDefinitenessFailure);
    REQUIRE_THROWS_AS(cholesky(Mat::from_rows({{1.0, 0.5}, {0.0, 1.0}})), NotSymmetric);
}

TEST_CASE("cholesky reproduces a random lower factor") {
    SplitMix64 rng(23);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t n = 1 + rng.index(6);
        Mat l(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < i; ++j) l(i, j) = rng.symmetric(1.0);
            l(i, i) = rng.uniform(0.5, 2.0); // positive diagonal fixes the sign convention
        }
        const Mat recovered = cholesky(l * l.transpose());
        REQUIRE(max_abs_diff(recovered, l) < 1e-8);
    }
}

TEST_CASE("mat_pow basics and nilpotent case") {
    SplitMix64 rng(3);
    const Mat a = random_matrix(rng, 4, 4);
    REQUIRE(max_abs_diff(mat_pow(a, 0), Mat::identity(4)) == 0.0);

    const Mat nil = Mat::from_rows({{0.0, 1.0}, {0.0, 0.0}});
    REQUIRE(mat_pow(nil, 2).max_abs() == 0.0);
}

TEST_CASE("mat_pow of the example state matrix matches direct repeated products") {
    const auto sys = testsupport::example_plant();
    const Mat expected = reference_multiply(reference_multiply(sys.a(), sys.a()), sys.a());
    REQUIRE(max_abs_diff(mat_pow(sys.a(), 3), expected) < 1e-12);
}

TEST_CASE("mat_pow exponent additivity") {
    SplitMix64 rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 1 + rng.index(4);
        const Mat a = random_matrix(rng, n, n);
        for (std::size_t i = 0; i <= 4; ++i)
            for (std::size_t j = 0; j <= 4 - i; ++j) {
                const Mat lhs = mat_pow(a, i + j);
                const Mat rhs = mat_pow(a, i) * mat_pow(a, j);
                const double scale = std::max(1.0, lhs.max_abs());
                REQUIRE(max_abs_diff(lhs, rhs) < 1e-9 * scale);
            }
    }
}
