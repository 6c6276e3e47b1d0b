#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <vector>

#include "dbmpc/matrix.hpp"

namespace dbmpc {

/// Feasibility slack accepted by the solver on every inequality.
inline constexpr double kQpFeasTol = 1e-9;
/// Acceptance threshold on the phase-1 slack / returned-point violation.
inline constexpr double kPhase1Tol = 1e-9;
/// A multiplier below this is treated as negative and its constraint dropped.
inline constexpr double kMultiplierTol = 1e-10;
/// Step directions with max-abs below this (relative to the iterate) are zero.
inline constexpr double kDirectionZeroTol = 1e-11;

enum class QpStatus { Optimal, Infeasible, IterationLimit };

/// Strictly convex QP  min 1/2 z'Hz + f'z  s.t.  G z <= rhs.
/// H must be symmetric positive definite; every row of G must be nonzero.
class QpProblem {
public:
    QpProblem(Mat h, std::vector<double> f) : h_(std::move(h)), f_(std::move(f)) { validate(); }

    QpProblem(Mat h, std::vector<double> f, Mat g, std::vector<double> rhs)
        : h_(std::move(h)), f_(std::move(f)), g_(std::move(g)), rhs_(std::move(rhs)) {
        validate();
        if (g_->cols() != h_.rows())
            throw DimensionMismatch("QpProblem: G has " + std::to_string(g_->cols()) +
                                    " columns, expected " + std::to_string(h_.rows()));
        if (g_->rows() != rhs_.size())
            throw DimensionMismatch("QpProblem: G rows and rhs length differ");
        for (std::size_t i = 0; i < g_->rows(); ++i) {
            double row_max = 0.0;
            for (std::size_t j = 0; j < g_->cols(); ++j)
                row_max = std::max(row_max, std::abs((*g_)(i, j)));
            if (row_max == 0.0)
                throw InvalidParameter("QpProblem: constraint row " + std::to_string(i) +
                                       " is identically zero");
        }
    }

    const Mat& h() const { return h_; }
    const std::vector<double>& f() const { return f_; }
    const std::optional<Mat>& g() const { return g_; }
    const std::vector<double>& rhs() const { return rhs_; }
    std::size_t num_vars() const { return h_.rows(); }
    std::size_t num_constraints() const { return g_ ? g_->rows() : 0; }

private:
    void validate() {
        if (!h_.is_square()) throw DimensionMismatch("QpProblem: H is " + h_.shape_str());
        if (f_.size() != h_.rows())
            throw DimensionMismatch("QpProblem: f length " + std::to_string(f_.size()) +
                                    " does not match H");
        cholesky(h_); // symmetric positive definite gate
    }

    Mat h_;
    std::vector<double> f_;
    std::optional<Mat> g_;
    std::vector<double> rhs_;
};

struct QpSolution {
    std::vector<double> z;
    std::vector<std::size_t> active_set;  // sorted constraint indices
    std::vector<double> multipliers;      // aligned with active_set
    double objective = 0.0;               // 1/2 z'Hz + f'z
    std::size_t iterations = 0;
    QpStatus status = QpStatus::Optimal;
};

namespace detail {

inline double row_dot(const Mat& g, std::size_t row, const std::vector<double>& z) {
    double s = 0.0;
    for (std::size_t j = 0; j < g.cols(); ++j) s += g(row, j) * z[j];
    return s;
}

inline double max_violation(const std::optional<Mat>& g, const std::vector<double>& rhs,
                            const std::vector<double>& z) {
    if (!g) return 0.0;
    double v = 0.0;
    for (std::size_t i = 0; i < g->rows(); ++i)
        v = std::max(v, row_dot(*g, i, z) - rhs[i]);
    return v;
}

inline std::vector<double> gradient(const QpProblem& prob, const std::vector<double>& z) {
    const std::size_t m = prob.num_vars();
    std::vector<double> grad(prob.f());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) grad[i] += prob.h()(i, j) * z[j];
    return grad;
}

/// Solves the equality-constrained KKT system
///   [ H  Gw' ] [ step ]   [ -grad ]
///   [ Gw  0  ] [ mult ] = [  resid ]
/// for the rows in `working`. Throws SingularMatrix on a dependent set.
inline void solve_kkt(const QpProblem& prob, const std::vector<std::size_t>& working,
                      const std::vector<double>& neg_grad, const std::vector<double>& resid,
                      std::vector<double>& step_out, std::vector<double>& mult_out) {
    const std::size_t m = prob.num_vars();
    const std::size_t w = working.size();
    Mat kkt(m + w, m + w);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) kkt(i, j) = prob.h()(i, j);
    for (std::size_t r = 0; r < w; ++r)
        for (std::size_t j = 0; j < m; ++j) {
            const double v = (*prob.g())(working[r], j);
            kkt(m + r, j) = v;
            kkt(j, m + r) = v;
        }
    Mat rhs(m + w, 1);
    for (std::size_t i = 0; i < m; ++i) rhs(i, 0) = neg_grad[i];
    for (std::size_t r = 0; r < w; ++r) rhs(m + r, 0) = resid[r];
    const Mat sol = lu_solve(kkt, rhs);
    step_out.assign(m, 0.0);
    mult_out.assign(w, 0.0);
    for (std::size_t i = 0; i < m; ++i) step_out[i] = sol(i, 0);
    for (std::size_t r = 0; r < w; ++r) mult_out[r] = sol(m + r, 0);
}

/// Primal active-set iteration from a feasible point. Each pass solves the
/// equality-constrained problem on the working face *absolutely* and, on an
/// unblocked step, assigns that minimizer to the iterate bit for bit; the
/// following pass then reproduces it exactly and the step comes out exactly
/// zero, so stationarity detection needs no scale-dependent threshold.
/// Tie-breaking is by lowest constraint index when adding; dropping follows
/// Bland's lowest-index rule over negative multipliers, with rows re-added
/// at an unchanged iterate barred from being dropped again (their recomputed
/// multiplier is roundoff, and re-dropping would cycle bit-exactly).
inline QpSolution active_set_iterate(const QpProblem& prob, std::vector<double> z,
                                     std::vector<std::size_t> working) {
    const std::size_t m = prob.num_vars();
    const std::size_t p = prob.num_constraints();
    const std::size_t max_iterations = 50 * (m + p);

    QpSolution sol;
    std::vector<double> face_min, mult;
    std::vector<char> in_working(p, 0);
    std::vector<char> no_redrop(p, 0);
    for (std::size_t i : working) in_working[i] = 1;
    bool optimal = false;

    std::vector<double> neg_f(prob.f());
    for (double& v : neg_f) v = -v;

    while (sol.iterations < max_iterations) {
        ++sol.iterations;

        std::vector<double> resid(working.size());
        for (std::size_t r = 0; r < working.size(); ++r) resid[r] = prob.rhs()[working[r]];
        try {
            solve_kkt(prob, working, neg_f, resid, face_min, mult);
        } catch (const SingularMatrix&) {
            // dependent working set (possible only via a degenerate warm
            // start); shed the highest row and retry
            in_working[working.back()] = 0;
            working.pop_back();
            continue;
        }

        std::vector<double> step(m);
        double step_norm = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            step[j] = face_min[j] - z[j];
            step_norm = std::max(step_norm, std::abs(step[j]));
        }

        if (step_norm == 0.0) {
            // exactly at the face minimizer: optimal unless a genuinely
            // negative multiplier allows progress off a constraint
            std::size_t drop_pos = working.size();
            for (std::size_t r = 0; r < working.size(); ++r)
                if (mult[r] < -kMultiplierTol && !no_redrop[working[r]]) {
                    drop_pos = r; // working is sorted, first hit = lowest index
                    break;
                }
            if (drop_pos == working.size()) {
                sol.z = z;
                sol.active_set = working;
                sol.multipliers = mult;
                sol.status = QpStatus::Optimal;
                optimal = true;
                break;
            }
            no_redrop[working[drop_pos]] = 1;
            in_working[working[drop_pos]] = 0;
            working.erase(working.begin() + static_cast<std::ptrdiff_t>(drop_pos));
            continue;
        }

        double alpha = 1.0;
        std::size_t blocker = p; // p = none
        for (std::size_t i = 0; i < p; ++i) {
            if (in_working[i]) continue;
            const double d = row_dot(*prob.g(), i, step);
            double row_scale = 0.0;
            for (std::size_t j = 0; j < m; ++j)
                row_scale = std::max(row_scale, std::abs((*prob.g())(i, j)));
            if (d <= 1e-13 * std::max(1.0, row_scale * step_norm)) continue;
            const double room = prob.rhs()[i] - row_dot(*prob.g(), i, z);
            const double a = std::max(room, 0.0) / d;
            if (a < alpha) {
                alpha = a;
                blocker = i;
            }
        }

        bool moved = false;
        if (blocker == p) {
            for (std::size_t j = 0; j < m; ++j) {
                if (z[j] != face_min[j]) moved = true;
                z[j] = face_min[j]; // snap exactly onto the face minimizer
            }
        } else if (alpha > 0.0) {
            for (std::size_t j = 0; j < m; ++j) z[j] += alpha * step[j];
            moved = true;
        }
        if (moved) std::fill(no_redrop.begin(), no_redrop.end(), 0);
        if (blocker < p) {
            auto it = std::lower_bound(working.begin(), working.end(), blocker);
            working.insert(it, blocker);
            in_working[blocker] = 1;
        }
    }

    if (!optimal) {
        sol.z = z;
        sol.active_set = working;
        sol.status = QpStatus::IterationLimit;
    }
    if (!sol.z.empty()) {
        double obj = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            double hz = 0.0;
            for (std::size_t j = 0; j < m; ++j) hz += prob.h()(i, j) * sol.z[j];
            obj += 0.5 * sol.z[i] * hz + prob.f()[i] * sol.z[i];
        }
        sol.objective = obj;
    }
    return sol;
}

} // namespace detail

/// Finds z with G z <= rhs + kPhase1Tol or reports infeasibility, by solving
/// the exact-penalty slack QP  min 1/2|z - z_ref|^2 + 1/2 s^2 + M s  subject
/// to  G z - s <= rhs, s >= 0.  The penalty weight stays moderate (so the
/// KKT solves stay well scaled) and the reference point is re-centered a few
/// times instead: as z_ref approaches the feasible set the slack collapses
/// to exactly zero. A persistently positive slack certifies infeasibility.
inline std::optional<std::vector<double>> phase1_feasible(const Mat& g,
                                                          const std::vector<double>& rhs) {
    if (g.rows() != rhs.size())
        throw DimensionMismatch("phase1_feasible: G rows and rhs length differ");
    const std::size_t m = g.cols();
    const std::size_t p = g.rows();

    double scale = 1.0;
    for (double r : rhs) scale = std::max(scale, std::abs(r));
    const double penalty = 1e4 * scale;

    std::vector<double> z_ref(m, 0.0);
    for (int round = 0; round < 4; ++round) {
        Mat h_aug = Mat::identity(m + 1);
        std::vector<double> f_aug(m + 1, 0.0);
        for (std::size_t j = 0; j < m; ++j) f_aug[j] = -z_ref[j];
        f_aug[m] = penalty;
        Mat g_aug(p + 1, m + 1);
        std::vector<double> rhs_aug(p + 1, 0.0);
        for (std::size_t i = 0; i < p; ++i) {
            for (std::size_t j = 0; j < m; ++j) g_aug(i, j) = g(i, j);
            g_aug(i, m) = -1.0;
            rhs_aug[i] = rhs[i];
        }
        g_aug(p, m) = -1.0; // s >= 0

        const QpProblem relaxed(std::move(h_aug), std::move(f_aug), std::move(g_aug),
                                std::move(rhs_aug));
        std::vector<double> start(m + 1, 0.0);
        for (std::size_t j = 0; j < m; ++j) start[j] = z_ref[j];
        double s0 = 0.0;
        for (std::size_t i = 0; i < p; ++i)
            s0 = std::max(s0, detail::row_dot(g, i, z_ref) - rhs[i]);
        start[m] = s0 + 1.0;

        const QpSolution sol = detail::active_set_iterate(relaxed, std::move(start), {});
        if (sol.status != QpStatus::Optimal) return std::nullopt;
        std::vector<double> z(sol.z.begin(), sol.z.begin() + static_cast<std::ptrdiff_t>(m));
        double violation = 0.0;
        for (std::size_t i = 0; i < p; ++i)
            violation = std::max(violation, detail::row_dot(g, i, z) - rhs[i]);
        if (violation <= kPhase1Tol) return z;
        z_ref = std::move(z);
    }
    return std::nullopt;
}

inline std::optional<std::vector<double>> phase1_feasible(const QpProblem& prob) {
    if (!prob.g()) return std::vector<double>(prob.num_vars(), 0.0);
    return phase1_feasible(*prob.g(), prob.rhs());
}

/// Primal active-set solve. Starts from the unconstrained minimizer when that
/// is feasible, else from the warm-start face when one is supplied and usable,
/// else from a phase-1 point. Deterministic for identical inputs.
inline QpSolution qp_solve(const QpProblem& prob,
                           const std::vector<std::size_t>* warm_start = nullptr) {
    const std::size_t m = prob.num_vars();

    Mat neg_f(m, 1);
    for (std::size_t i = 0; i < m; ++i) neg_f(i, 0) = -prob.f()[i];
    const Mat z_unc = lu_solve(prob.h(), neg_f);
    std::vector<double> z0(m);
    for (std::size_t i = 0; i < m; ++i) z0[i] = z_unc(i, 0);

    if (!prob.g() || detail::max_violation(prob.g(), prob.rhs(), z0) <= kQpFeasTol)
        return detail::active_set_iterate(prob, std::move(z0), {});

    if (warm_start && !warm_start->empty()) {
        std::vector<std::size_t> working(*warm_start);
        std::sort(working.begin(), working.end());
        working.erase(std::unique(working.begin(), working.end()), working.end());
        while (!working.empty() && working.back() >= prob.num_constraints()) working.pop_back();
        if (working.size() > m) working.resize(m);
        if (!working.empty()) {
            try {
                std::vector<double> neg_grad(prob.f());
                for (double& v : neg_grad) v = -v;
                std::vector<double> resid(working.size());
                for (std::size_t r = 0; r < working.size(); ++r)
                    resid[r] = prob.rhs()[working[r]];
                std::vector<double> z_warm, mult;
                detail::solve_kkt(prob, working, neg_grad, resid, z_warm, mult);
                if (detail::max_violation(prob.g(), prob.rhs(), z_warm) <= kQpFeasTol)
                    return detail::active_set_iterate(prob, std::move(z_warm),
                                                      std::move(working));
            } catch (const SingularMatrix&) {
                // dependent warm set; fall through to the cold path
            }
        }
    }

    auto feasible = phase1_feasible(prob);
    if (!feasible) {
        QpSolution sol;
        sol.status = QpStatus::Infeasible;
        return sol;
    }
    return detail::active_set_iterate(prob, std::move(*feasible), {});
}

/// KKT certificate quantities for an Optimal solution; all should be small
/// (stationarity, complementarity) or nonnegative-ish (multipliers, slacks).
struct KktCertificate {
    double stationarity_residual = 0.0; // max_abs(H z + f + G_a' lambda)
    double min_multiplier = 0.0;
    double max_complementarity = 0.0; // max |lambda_i (G z - rhs)_i| over active rows
    double max_violation = 0.0;       // max(G z - rhs) over all rows
};

inline KktCertificate kkt_certificate(const QpProblem& prob, const QpSolution& sol) {
    KktCertificate cert;
    const std::size_t m = prob.num_vars();
    std::vector<double> grad = detail::gradient(prob, sol.z);
    for (std::size_t r = 0; r < sol.active_set.size(); ++r)
        for (std::size_t j = 0; j < m; ++j)
            grad[j] += sol.multipliers[r] * (*prob.g())(sol.active_set[r], j);
    for (double v : grad) cert.stationarity_residual = std::max(cert.stationarity_residual, std::abs(v));
    for (double l : sol.multipliers) cert.min_multiplier = std::min(cert.min_multiplier, l);
    for (std::size_t r = 0; r < sol.active_set.size(); ++r) {
        const double gap = detail::row_dot(*prob.g(), sol.active_set[r], sol.z) -
                           prob.rhs()[sol.active_set[r]];
        cert.max_complementarity =
            std::max(cert.max_complementarity, std::abs(sol.multipliers[r] * gap));
    }
    cert.max_violation = detail::max_violation(prob.g(), prob.rhs(), sol.z);
    return cert;
}

} // namespace dbmpc
