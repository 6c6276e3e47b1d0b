#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "dbmpc/cmpc.hpp"
#include "dbmpc/deadbeat.hpp"
#include "dbmpc/lti.hpp"

namespace dbmpc {

/// Relative threshold used for the settling-time measurement.
inline constexpr double kSettleRelTol = 1e-9;

/// What a controller decided at one step; the optional diagnostics are
/// populated by optimization-based controllers and stay empty otherwise.
struct ControlDecision {
    double u = 0.0;
    bool feasible = true;
    std::optional<double> objective;
    std::optional<Mat> terminal_state;
    std::optional<std::size_t> active_set_size;
};

using Controller = std::function<ControlDecision(std::size_t k, const Mat& x)>;

struct TrajectoryStep {
    std::size_t k = 0;
    Mat x;
    double u = 0.0;
    std::optional<double> objective;
    std::optional<Mat> terminal_state;
    std::optional<std::size_t> active_set_size;

    TrajectoryStep() : x(1, 1) {}
};

struct Trajectory {
    std::vector<TrajectoryStep> steps;
    std::optional<std::size_t> settled_at;   // first k after which |x| stays below threshold
    std::size_t constraint_violations = 0;   // state or control memberships failed
    std::optional<std::size_t> infeasible_at; // controller gave up here; run halted
};

/// Runs the closed loop for horizon_steps transitions, recording the state,
/// the applied control and the controller diagnostics at k = 0..horizon_steps
/// (the controller is also consulted at the final state, so every recorded
/// pair of consecutive steps satisfies x' = A x + B u exactly as computed).
/// A controller reporting infeasible halts the run; the partial trajectory is
/// returned with the failing step recorded in infeasible_at.
inline Trajectory run_closed_loop(const LinearSystem& sys, const Controller& controller,
                                  const Mat& x0, std::size_t horizon_steps,
                                  const ConstraintSpec* membership = nullptr) {
    if (horizon_steps < 1) throw InvalidParameter("run_closed_loop: horizon must be >= 1");
    if (x0.rows() != sys.n() || x0.cols() != 1)
        throw DimensionMismatch("run_closed_loop: x0 must be " + std::to_string(sys.n()) + "x1");

    Trajectory traj;
    traj.steps.reserve(horizon_steps + 1);
    Mat x = x0;
    for (std::size_t k = 0; k <= horizon_steps; ++k) {
        const ControlDecision decision = controller(k, x);
        if (!decision.feasible) {
            traj.infeasible_at = k;
            break;
        }
        TrajectoryStep step_record;
        step_record.k = k;
        step_record.x = x;
        step_record.u = decision.u;
        step_record.objective = decision.objective;
        step_record.terminal_state = decision.terminal_state;
        step_record.active_set_size = decision.active_set_size;
        traj.steps.push_back(std::move(step_record));

        if (membership) {
            const MembershipReport rep = check_membership(*membership, x, decision.u);
            if (!rep.state_and_control()) ++traj.constraint_violations;
        }
        if (k < horizon_steps) x = step(sys, x, decision.u);
    }

    const double threshold = kSettleRelTol * std::max(1.0, x0.max_abs());
    std::size_t first_settled = traj.steps.size();
    for (std::size_t i = traj.steps.size(); i-- > 0;) {
        if (traj.steps[i].x.max_abs() > threshold) break;
        first_settled = i;
    }
    if (first_settled < traj.steps.size()) traj.settled_at = traj.steps[first_settled].k;
    return traj;
}

/// u = -K_db x.
inline Controller make_deadbeat_controller(DeadbeatGain gain) {
    return [gain = std::move(gain)](std::size_t, const Mat& x) {
        ControlDecision d;
        d.u = unconstrained_controller_step(gain, x);
        return d;
    };
}

/// First entry of the terminal-equality optimal sequence, re-solved per step.
inline Controller make_terminal_equality_controller(LinearSystem sys, WeightSpec weights) {
    return [sys = std::move(sys), weights = std::move(weights)](std::size_t, const Mat& x) {
        ControlDecision d;
        d.u = solve_terminal_equality(sys, weights, x).controls[0];
        return d;
    };
}

/// First entry of the terminal-cost-only optimal sequence, re-solved per step.
inline Controller make_terminal_cost_controller(LinearSystem sys, Mat p) {
    return [sys = std::move(sys), p = std::move(p)](std::size_t, const Mat& x) {
        ControlDecision d;
        d.u = solve_terminal_cost_unconstrained(sys, p, x)[0];
        return d;
    };
}

/// Receding-horizon constrained MPC; the referenced instance carries the
/// warm-start state and must outlive the returned controller.
inline Controller make_constrained_controller(ConstrainedMpc& mpc) {
    return [&mpc](std::size_t, const Mat& x) {
        const StepResult r = controller_step(mpc, x);
        ControlDecision d;
        d.feasible = r.feasible;
        if (r.feasible) {
            d.u = r.u_applied;
            d.objective = r.objective;
            d.terminal_state = r.terminal_state;
            d.active_set_size = r.active_set.size();
        }
        return d;
    };
}

} // namespace dbmpc
