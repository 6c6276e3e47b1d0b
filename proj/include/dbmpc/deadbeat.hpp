#pragma once

#include <optional>
#include <vector>

#include "dbmpc/lti.hpp"
#include "dbmpc/matrix.hpp"

namespace dbmpc {

/// Relative tolerance for declaring (A - BK)^m zero; scaled by
/// max(1, max_abs(A - BK))^m since entries of the gain grow with A^n.
inline constexpr double kNilpotencyRelTol = 1e-8;

/// Smallest m <= n with (A - B k)^m = 0 at the relative tolerance, or nullopt
/// when no power up to n vanishes.
inline std::optional<std::size_t> nilpotency_index(const LinearSystem& sys, const Mat& k_row) {
    if (k_row.rows() != 1 || k_row.cols() != sys.n())
        throw DimensionMismatch("nilpotency_index: gain must be 1x" + std::to_string(sys.n()));
    const Mat m = sys.a() - sys.b() * k_row;
    const double base = std::max(1.0, m.max_abs());
    Mat power = Mat::identity(sys.n());
    double scale = 1.0;
    for (std::size_t i = 1; i <= sys.n(); ++i) {
        power = m * power;
        scale *= base;
        if (power.max_abs() <= kNilpotencyRelTol * scale) return i;
    }
    return std::nullopt;
}

/// Explicit deadbeat gain K_db = S_n^T A^n where S_n^T is the first row of the
/// inverse of the controllability matrix; A - B K_db is nilpotent.
struct DeadbeatGain {
    Mat k_db;            // 1 x n
    Mat s_inv_first_row; // 1 x n, the row S_n^T
    std::size_t nilpotency_index;
};

inline DeadbeatGain deadbeat_gain(const LinearSystem& sys) {
    const std::size_t n = sys.n();
    const Mat s = controllability_matrix(sys);
    Mat e1(n, 1);
    e1(0, 0) = 1.0;
    const Mat z = lu_solve(s.transpose(), e1); // S^T z = e1  =>  z^T = first row of S^{-1}
    const Mat s_n_row = z.transpose();
    const Mat k_db = s_n_row * mat_pow(sys.a(), n);
    const auto index = nilpotency_index(sys, k_db);
    if (!index)
        throw Error("deadbeat_gain: closed loop failed the nilpotency check; "
                    "the controllability matrix is too ill-conditioned");
    return {k_db, s_n_row, *index};
}

/// Stage weights for the finite-horizon objective; q must be symmetric
/// positive definite and r positive.
class WeightSpec {
public:
    WeightSpec(Mat q, double r) : q_(std::move(q)), r_(r) {
        if (!q_.is_square()) throw DimensionMismatch("WeightSpec: Q is " + q_.shape_str());
        cholesky(q_); // throws unless symmetric positive definite
        if (!(r > 0.0)) throw InvalidParameter("WeightSpec: R must be positive");
    }
    const Mat& q() const { return q_; }
    double r() const { return r_; }

private:
    Mat q_;
    double r_;
};

struct UnconstrainedSolution {
    std::vector<double> controls; // U*, length n
    Mat stacked_states;           // n*n x 1, states x(1|k)..x(n|k)
    Mat terminal_state;           // exactly zero by construction
};

/// Horizon-n optimization with the terminal equality x(n|k) = 0. The equality
/// pins the one and only feasible sequence U = -S^{-1} A^n x, so the weights
/// never influence the result; the parameter exists to keep the stage-cost
/// signature of the optimization it solves.
inline UnconstrainedSolution solve_terminal_equality(const LinearSystem& sys,
                                                     const WeightSpec& weights, const Mat& x) {
    (void)weights;
    const std::size_t n = sys.n();
    if (x.rows() != n || x.cols() != 1)
        throw DimensionMismatch("solve_terminal_equality: state must be " + std::to_string(n) +
                                "x1");
    const PredictionStack pred = build_prediction(sys);
    const Mat rhs = -(mat_pow(sys.a(), n) * x);
    const Mat u = lu_solve(pred.s_row, rhs);

    Mat stacked = pred.phi * x + pred.gamma * u;
    for (std::size_t r = 0; r < n; ++r) stacked((n - 1) * n + r, 0) = 0.0; // pinned, not computed

    std::vector<double> controls(n);
    for (std::size_t i = 0; i < n; ++i) controls[i] = u(i, 0);
    return {std::move(controls), std::move(stacked), Mat(n, 1)};
}

/// Horizon-n optimization penalizing only x(n|k)' P x(n|k). Solved through its
/// stationarity system (S'PS) U = -S'P A^n x; with S invertible the minimizer
/// coincides with the terminal-equality solution for every positive definite P.
inline std::vector<double> solve_terminal_cost_unconstrained(const LinearSystem& sys, const Mat& p,
                                                             const Mat& x) {
    const std::size_t n = sys.n();
    if (p.rows() != n || !p.is_square())
        throw DimensionMismatch("solve_terminal_cost_unconstrained: P is " + p.shape_str());
    if (x.rows() != n || x.cols() != 1)
        throw DimensionMismatch("solve_terminal_cost_unconstrained: state must be " +
                                std::to_string(n) + "x1");
    cholesky(p); // positive definiteness gate
    const Mat s = controllability_matrix(sys);
    const Mat sps = s.transpose() * p * s;
    const Mat rhs = -(s.transpose() * (p * (mat_pow(sys.a(), n) * x)));
    const Mat u = lu_solve(sps, rhs);
    std::vector<double> controls(n);
    for (std::size_t i = 0; i < n; ++i) controls[i] = u(i, 0);
    return controls;
}

/// Receding-horizon law u = -K_db x.
inline double unconstrained_controller_step(const DeadbeatGain& gain, const Mat& x) {
    if (x.rows() != gain.k_db.cols() || x.cols() != 1)
        throw DimensionMismatch("unconstrained_controller_step: state dimension mismatch");
    return -(gain.k_db * x)(0, 0);
}

} // namespace dbmpc
