#include "test_support.hpp"

#include "dbmpc/deadbeat.hpp"
#include "dbmpc/lyap.hpp"

using namespace dbmpc;
using testsupport::max_abs_diff;

namespace {

/// Row-major vectorization solve of the same equation; permutes the unknown
/// ordering relative to the library's column-major path.
Mat solve_lyapunov_rowmajor(const Mat& a_k, const Mat& q_eff) {
    const std::size_t n = a_k.rows();
    const Mat at = a_k.transpose();
    Mat system(n * n, n * n);
    // row-major vec: vec(A' P A)[i*n+j] = sum_{k,l} at(i,k) P(k,l) a(l,j)
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t k = 0; k < n; ++k)
                for (std::size_t l = 0; l < n; ++l)
                    system(i * n + j, k * n + l) = at(i, k) * a_k(l, j);
    const Mat lhs = Mat::identity(n * n) - system;
    Mat rhs(n * n, 1);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) rhs(i * n + j, 0) = q_eff(i, j);
    const Mat sol = lu_solve(lhs, rhs);
    Mat p(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) p(i, j) = sol(i * n + j, 0);
    return (p + p.transpose()) * 0.5;
}

} // namespace

TEST_CASE("zero dynamics give P equal to the right-hand side") {
    const Mat q = Mat::from_rows({{2.0, 0.5}, {0.5, 1.0}});
    const auto result = solve_discrete_lyapunov(Mat(2, 2), q);
    REQUIRE(result);
    REQUIRE(max_abs_diff(result->p, q) == 0.0);
    REQUIRE(result->residual == 0.0);
}

TEST_CASE("scalar contraction has the closed-form solution") {
    const auto result =
        solve_discrete_lyapunov(Mat::from_rows({{0.5}}), Mat::from_rows({{1.0}}));
    REQUIRE(result);
    REQUIRE(result->p(0, 0) == Catch::Approx(4.0 / 3.0).margin(1e-12));
}

TEST_CASE("example stabilizing gain: residual gates, reference P is reported") {
    const auto sys = testsupport::example_plant();
    const Mat k = testsupport::example_stabilizing_gain();
    const Mat a_k = sys.a() - sys.b() * k;
    const Mat q_eff = Mat::identity(3) + (k.transpose() * k) * 0.1;

    const auto result = solve_discrete_lyapunov(a_k, q_eff);
    REQUIRE(result);
    REQUIRE(result->residual <= 1e-8 * std::max(1.0, result->p.max_abs()));
    // the residual identity is the ground truth; the reference matrix carries
    // only four decimal places, so its deviation is informational
    const double reference_dev = max_abs_diff(result->p, testsupport::reference_terminal_weight());
    WARN("reference-P max-abs deviation (informational): " << reference_dev);
    REQUIRE(is_positive_definite(result->p));
}

TEST_CASE("is_schur_stable certificates") {
    REQUIRE(is_schur_stable(Mat::identity(2) * 0.5));
    REQUIRE_FALSE(is_schur_stable(Mat::identity(2)));       // singular Kronecker system
    REQUIRE_FALSE(is_schur_stable(Mat::identity(2) * 2.0)); // solvable but indefinite P

    const auto sys = testsupport::example_plant();
    const auto gain = deadbeat_gain(sys);
    REQUIRE(is_schur_stable(sys.a() - sys.b() * gain.k_db)); // nilpotent implies Schur
}

TEST_CASE("precondition violations throw") {
    REQUIRE_THROWS_AS(solve_discrete_lyapunov(Mat(2, 2), Mat::from_rows({{1.0, 2.0}, {0.0, 1.0}})),
                      NotSymmetric);
    REQUIRE_THROWS_AS(solve_discrete_lyapunov(Mat(2, 2), Mat::from_rows({{1.0, 2.0}, {2.0, 1.0}})),
                      PositiveDefinitenessFailure);
}

TEST_CASE("random Schur-stable systems solve with certified residual") {
    SplitMix64 rng(47);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 1 + rng.index(4);
        const Mat a_k = random_schur_stable(rng, n);
        const Mat q_eff = random_spd(rng, n);
        const auto result = solve_discrete_lyapunov(a_k, q_eff);
        REQUIRE(result);
        REQUIRE(result->residual <= 1e-8 * std::max(1.0, result->p.max_abs()));
        REQUIRE(is_positive_definite(result->p));
    }
}

TEST_CASE("solution is independent of the vectorization order") {
    SplitMix64 rng(53);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 1 + rng.index(4);
        const Mat a_k = random_schur_stable(rng, n);
        const Mat q_eff = random_spd(rng, n);
        const auto result = solve_discrete_lyapunov(a_k, q_eff);
        REQUIRE(result);
        const Mat p_rowmajor = solve_lyapunov_rowmajor(a_k, q_eff);
        REQUIRE(max_abs_diff(result->p, p_rowmajor) < 1e-9 * std::max(1.0, result->p.max_abs()));
    }
}

TEST_CASE("solution is monotone in the right-hand side") {
    SplitMix64 rng(59);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 1 + rng.index(3);
        const Mat a_k = random_schur_stable(rng, n);
        const Mat q2 = random_spd(rng, n);
        const Mat bump = random_matrix(rng, n, n);
        const Mat q1 = q2 + bump.transpose() * bump; // q1 - q2 is PSD
        const auto p1 = solve_discrete_lyapunov(a_k, q1);
        const auto p2 = solve_discrete_lyapunov(a_k, q2);
        REQUIRE(p1);
        REQUIRE(p2);
        const Mat diff = p1->p - p2->p + Mat::identity(n) * 1e-9;
        REQUIRE(try_cholesky(diff).ok());
    }
}
