#pragma once

#include <optional>

#include "dbmpc/matrix.hpp"

namespace dbmpc {

/// Residual gate for an accepted Lyapunov solution, relative to max_abs(P).
inline constexpr double kLyapResidualRelTol = 1e-8;

namespace detail {

/// Kronecker product, block (i,j) of the result = a(i,j) * b.
inline Mat kron(const Mat& a, const Mat& b) {
    Mat out(a.rows() * b.rows(), a.cols() * b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) {
            const double v = a(i, j);
            if (v == 0.0) continue;
            for (std::size_t r = 0; r < b.rows(); ++r)
                for (std::size_t c = 0; c < b.cols(); ++c)
                    out(i * b.rows() + r, j * b.cols() + c) = v * b(r, c);
        }
    return out;
}

/// Column-major vectorization: vec(m)[j*rows + i] = m(i, j).
inline Mat vec_cols(const Mat& m) {
    Mat v(m.rows() * m.cols(), 1);
    for (std::size_t j = 0; j < m.cols(); ++j)
        for (std::size_t i = 0; i < m.rows(); ++i) v(j * m.rows() + i, 0) = m(i, j);
    return v;
}

inline Mat unvec_cols(const Mat& v, std::size_t rows, std::size_t cols) {
    Mat m(rows, cols);
    for (std::size_t j = 0; j < cols; ++j)
        for (std::size_t i = 0; i < rows; ++i) m(i, j) = v(j * rows + i, 0);
    return m;
}

} // namespace detail

struct LyapunovResult {
    Mat p;           // symmetric positive definite solution
    double residual; // max_abs(a_k' p a_k - p + q_eff)
};

/// Solves a_k' P a_k - P = -q_eff through the n^2 x n^2 Kronecker system
/// (I - a_k' (x) a_k') vec(P) = vec(q_eff), then symmetrizes P. Returns
/// nullopt when the linear system is singular or P is not positive definite,
/// i.e. whenever a_k cannot be certified Schur stable. q_eff must be
/// symmetric positive definite.
inline std::optional<LyapunovResult> solve_discrete_lyapunov(const Mat& a_k, const Mat& q_eff) {
    if (!a_k.is_square()) throw DimensionMismatch("solve_discrete_lyapunov: a_k is " + a_k.shape_str());
    if (q_eff.rows() != a_k.rows() || !q_eff.is_square())
        throw DimensionMismatch("solve_discrete_lyapunov: q_eff is " + q_eff.shape_str());
    cholesky(q_eff); // precondition: symmetric positive definite

    const std::size_t n = a_k.rows();
    const Mat at = a_k.transpose();
    const Mat system = Mat::identity(n * n) - detail::kron(at, at);

    Mat vec_p(n * n, 1);
    try {
        vec_p = lu_solve(system, detail::vec_cols(q_eff));
    } catch (const SingularMatrix&) {
        return std::nullopt; // eigenvalue product on the unit circle
    }

    Mat p = detail::unvec_cols(vec_p, n, n);
    p = (p + p.transpose()) * 0.5;

    if (!try_cholesky(p).ok()) return std::nullopt;
    const double residual = (at * p * a_k - p + q_eff).max_abs();
    if (residual > kLyapResidualRelTol * std::max(1.0, p.max_abs())) return std::nullopt;
    return LyapunovResult{std::move(p), residual};
}

/// Constructive Schur-stability certificate: a_k is Schur stable iff the
/// Lyapunov equation with identity right-hand side has a positive definite
/// solution.
inline bool is_schur_stable(const Mat& a_k) {
    return solve_discrete_lyapunov(a_k, Mat::identity(a_k.rows())).has_value();
}

} // namespace dbmpc
