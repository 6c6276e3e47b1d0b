#pragma once

#include <optional>
#include <vector>

#include "dbmpc/matrix.hpp"

namespace dbmpc {

/// The pair (A, B) failed the full-rank test on [A^{n-1}B ... B].
class UncontrollablePair : public Error {
public:
    using Error::Error;
};

/// Relative pivot threshold for the construction-time controllability test.
inline constexpr double kControllabilityPivotRelTol = 1e-10;
/// Slack tolerance applied to every membership inequality.
inline constexpr double kMembershipTol = 1e-9;

namespace detail {

/// Columns A^k B for k = 0..n-1, each computed by one left-multiplication of
/// the previous column. Shared by the controllability matrix and the
/// prediction stack so both see bitwise-identical values.
inline std::vector<Mat> input_power_columns(const Mat& a, const Mat& b) {
    const std::size_t n = a.rows();
    std::vector<Mat> cols;
    cols.reserve(n);
    cols.push_back(b);
    for (std::size_t k = 1; k < n; ++k) cols.push_back(a * cols.back());
    return cols;
}

inline Mat assemble_controllability(const Mat& a, const Mat& b) {
    const std::size_t n = a.rows();
    const auto cols = input_power_columns(a, b);
    Mat s(n, n);
    for (std::size_t j = 0; j < n; ++j)      // column j holds A^{n-1-j} B
        for (std::size_t i = 0; i < n; ++i) s(i, j) = cols[n - 1 - j](i, 0);
    return s;
}

} // namespace detail

/// Discrete-time SISO plant x(k+1) = A x(k) + B u(k). Construction rejects
/// non-square A, non-column B, and uncontrollable pairs.
class LinearSystem {
public:
    LinearSystem(Mat a, Mat b) : a_(std::move(a)), b_(std::move(b)) {
        if (!a_.is_square())
            throw DimensionMismatch("LinearSystem: A is " + a_.shape_str());
        if (b_.cols() != 1)
            throw DimensionMismatch("LinearSystem: B must be a single column (SISO), got " +
                                    b_.shape_str());
        if (b_.rows() != a_.rows())
            throw DimensionMismatch("LinearSystem: A is " + a_.shape_str() + " but B has " +
                                    std::to_string(b_.rows()) + " rows");
        const Mat s = detail::assemble_controllability(a_, b_);
        if (!lu_invertible(s, kControllabilityPivotRelTol))
            throw UncontrollablePair("LinearSystem: [A^{n-1}B ... B] is rank deficient");
    }

    const Mat& a() const { return a_; }
    const Mat& b() const { return b_; }
    std::size_t n() const { return a_.rows(); }

private:
    Mat a_;
    Mat b_;
};

/// Controllability matrix S = [A^{n-1}B  A^{n-2}B ... B], descending powers.
inline Mat controllability_matrix(const LinearSystem& sys) {
    return detail::assemble_controllability(sys.a(), sys.b());
}

/// Stacked prediction over the fixed horizon N = n:
///   phi   : vertical stack of A^1..A^n            (n*n x n)
///   gamma : block (i,j) = A^{i-j-1} B for j < i   (n*n x n)
///   s_row : last block-row of gamma = [A^{n-1}B ... B]
/// so that stack(x(1|k)..x(n|k)) = phi * x(k) + gamma * U(k).
struct PredictionStack {
    Mat phi;
    Mat s_row;
    Mat gamma;
};

inline PredictionStack build_prediction(const LinearSystem& sys) {
    const std::size_t n = sys.n();
    const auto cols = detail::input_power_columns(sys.a(), sys.b());

    Mat phi(n * n, n);
    Mat apow = Mat::identity(n);
    for (std::size_t i = 1; i <= n; ++i) {
        apow = sys.a() * apow;
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c) phi((i - 1) * n + r, c) = apow(r, c);
    }

    Mat gamma(n * n, n);
    for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t j = 1; j <= i; ++j) {
            const Mat& col = cols[i - j];
            for (std::size_t r = 0; r < n; ++r) gamma((i - 1) * n + r, j - 1) = col(r, 0);
        }

    Mat s_row(n, n);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) s_row(r, c) = gamma((n - 1) * n + r, c);

    return {std::move(phi), std::move(s_row), std::move(gamma)};
}

/// One plant step: A x + B u.
inline Mat step(const LinearSystem& sys, const Mat& x, double u) {
    if (x.rows() != sys.n() || x.cols() != 1)
        throw DimensionMismatch("step: state must be " + std::to_string(sys.n()) + "x1");
    return sys.a() * x + sys.b() * u;
}

/// State polytope X = {x : H x <= h}, control interval U = [u_min, u_max] and
/// axis-aligned terminal box X_f = {x : |x_i| <= eps_i}. state_h may be absent,
/// in which case X is the whole space.
class ConstraintSpec {
public:
    ConstraintSpec(std::optional<Mat> state_h, std::vector<double> state_rhs, double u_min,
                   double u_max, std::vector<double> terminal_halfwidth)
        : state_h_(std::move(state_h)),
          state_rhs_(std::move(state_rhs)),
          u_min_(u_min),
          u_max_(u_max),
          terminal_halfwidth_(std::move(terminal_halfwidth)) {
        if (terminal_halfwidth_.empty())
            throw InvalidParameter("ConstraintSpec: terminal halfwidths are empty");
        for (double e : terminal_halfwidth_)
            if (!(e > 0.0) || !std::isfinite(e))
                throw InvalidParameter("ConstraintSpec: terminal halfwidths must be positive");
        if (!(u_min_ < 0.0 && 0.0 < u_max_))
            throw InvalidParameter("ConstraintSpec: control bounds must satisfy u_min < 0 < u_max");
        if (state_h_.has_value() != !state_rhs_.empty())
            throw DimensionMismatch("ConstraintSpec: state_h and state_rhs must come together");
        if (state_h_) {
            if (state_h_->cols() != terminal_halfwidth_.size())
                throw DimensionMismatch("ConstraintSpec: state_h has " +
                                        std::to_string(state_h_->cols()) + " columns, expected " +
                                        std::to_string(terminal_halfwidth_.size()));
            if (state_h_->rows() != state_rhs_.size())
                throw DimensionMismatch("ConstraintSpec: state_h rows and state_rhs length differ");
            for (double h : state_rhs_)
                if (!(h > 0.0))
                    throw InvalidParameter(
                        "ConstraintSpec: state_rhs must be positive (X contains the origin)");
        }
    }

    const std::optional<Mat>& state_h() const { return state_h_; }
    const std::vector<double>& state_rhs() const { return state_rhs_; }
    double u_min() const { return u_min_; }
    double u_max() const { return u_max_; }
    const std::vector<double>& terminal_halfwidth() const { return terminal_halfwidth_; }
    std::size_t dim() const { return terminal_halfwidth_.size(); }
    std::size_t state_rows() const { return state_h_ ? state_h_->rows() : 0; }

    /// Copy with the terminal box replaced; used by the bisection utility.
    ConstraintSpec with_terminal_halfwidth(std::vector<double> eps) const {
        return ConstraintSpec(state_h_, state_rhs_, u_min_, u_max_, std::move(eps));
    }

private:
    std::optional<Mat> state_h_;
    std::vector<double> state_rhs_;
    double u_min_;
    double u_max_;
    std::vector<double> terminal_halfwidth_;
};

/// Per-set membership with per-row slacks (negative slack = violation).
/// Each inequality is tested with kMembershipTol of slack.
struct MembershipReport {
    bool in_state_set = true;
    bool in_control_set = true;
    bool in_terminal_set = true;
    std::vector<double> state_slack;    // h_i - (H x)_i
    double control_slack_low = 0.0;     // u - u_min
    double control_slack_high = 0.0;    // u_max - u
    std::vector<double> terminal_slack; // eps_i - |x_i|

    bool state_and_control() const { return in_state_set && in_control_set; }
    bool all() const { return in_state_set && in_control_set && in_terminal_set; }
};

inline MembershipReport check_membership(const ConstraintSpec& spec, const Mat& x, double u) {
    if (x.rows() != spec.dim() || x.cols() != 1)
        throw DimensionMismatch("check_membership: state must be " + std::to_string(spec.dim()) +
                                "x1");
    MembershipReport rep;
    if (spec.state_h()) {
        const Mat hx = *spec.state_h() * x;
        rep.state_slack.resize(hx.rows());
        for (std::size_t i = 0; i < hx.rows(); ++i) {
            rep.state_slack[i] = spec.state_rhs()[i] - hx(i, 0);
            if (rep.state_slack[i] < -kMembershipTol) rep.in_state_set = false;
        }
    }
    rep.control_slack_low = u - spec.u_min();
    rep.control_slack_high = spec.u_max() - u;
    if (rep.control_slack_low < -kMembershipTol || rep.control_slack_high < -kMembershipTol)
        rep.in_control_set = false;
    rep.terminal_slack.resize(spec.dim());
    for (std::size_t i = 0; i < spec.dim(); ++i) {
        rep.terminal_slack[i] = spec.terminal_halfwidth()[i] - std::abs(x(i, 0));
        if (rep.terminal_slack[i] < -kMembershipTol) rep.in_terminal_set = false;
    }
    return rep;
}

} // namespace dbmpc
