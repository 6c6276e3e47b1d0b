#pragma once

#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dbmpc/cmpc.hpp"
#include "dbmpc/csvio.hpp"
#include "dbmpc/deadbeat.hpp"
#include "dbmpc/log.hpp"
#include "dbmpc/lyap.hpp"
#include "dbmpc/sampling.hpp"
#include "dbmpc/scenario.hpp"
#include "dbmpc/simkit.hpp"
#include "dbmpc/svgplot.hpp"

namespace dbmpc {

/// The configured stabilizing gain does not stabilize A - BK.
class UnstableGain : public Error {
public:
    using Error::Error;
};

/// Terminal-box bisection hit its floor without finding a certifiable size.
class TerminalSetUnverifiable : public Error {
public:
    using Error::Error;
};

/// Everything the design stage produces for a scenario; the constrained
/// fields stay empty for unconstrained controller kinds.
struct DesignReport {
    std::size_t n = 0;
    std::string scenario_name;
    Mat k_db;
    Mat s_inv_first_row;
    std::size_t nilpotency_index = 0;
    std::optional<Mat> p;
    std::optional<double> lyap_residual;
    std::optional<bool> schur_certified;
    std::optional<TerminalSetReport> terminal_report;
    std::optional<double> bisected_scale;
    std::optional<std::vector<double>> terminal_halfwidth;

    DesignReport() : k_db(1, 1), s_inv_first_row(1, 1) {}

    bool certified() const { return !terminal_report || terminal_report->certified; }

    std::string to_text() const {
        std::ostringstream os;
        os.precision(10);
        os << "design report: " << scenario_name << " (n = " << n << ")\n";
        os << "  deadbeat gain K_db  = " << row_text(k_db) << "\n";
        os << "  S_n^T (first row of S^-1) = " << row_text(s_inv_first_row) << "\n";
        os << "  nilpotency index    = " << nilpotency_index << "\n";
        if (schur_certified)
            os << "  Schur certificate   : " << (*schur_certified ? "OK" : "FAILED")
               << " (Lyapunov equation with identity right-hand side)\n";
        if (p) {
            os << "  terminal weight P   =\n";
            for (std::size_t i = 0; i < p->rows(); ++i) {
                os << "    [";
                for (std::size_t j = 0; j < p->cols(); ++j)
                    os << (*p)(i, j) << (j + 1 < p->cols() ? ", " : "");
                os << "]\n";
            }
        }
        if (lyap_residual)
            os << "  Lyapunov residual   = " << *lyap_residual << " (tolerance "
               << kLyapResidualRelTol << " * max_abs(P)) OK\n";
        if (terminal_halfwidth) {
            os << "  terminal halfwidth  = [";
            for (std::size_t i = 0; i < terminal_halfwidth->size(); ++i)
                os << (*terminal_halfwidth)[i] << (i + 1 < terminal_halfwidth->size() ? ", " : "");
            os << "]";
            if (bisected_scale) os << " (bisected scale " << *bisected_scale << ")";
            os << "\n";
        }
        if (terminal_report) {
            if (terminal_report->certified) {
                os << "  terminal certificate: OK (all vertex-orbit conditions hold)\n";
            } else {
                os << "  terminal certificate: FAILED, " << terminal_report->violations.size()
                   << " violated condition(s)\n";
                std::size_t shown = 0;
                for (const auto& v : terminal_report->violations) {
                    if (shown++ == 8) {
                        os << "    ...\n";
                        break;
                    }
                    os << "    vertex " << v.vertex << " orbit step " << v.orbit_step << " "
                       << (v.kind == TerminalSetViolation::Kind::StateInX ? "state row "
                                                                          : "control bound ")
                       << v.row << " slack " << v.slack << "\n";
                }
            }
        }
        return os.str();
    }

private:
    static std::string row_text(const Mat& row) {
        std::ostringstream os;
        os.precision(10);
        os << "[";
        for (std::size_t j = 0; j < row.cols(); ++j)
            os << row(0, j) << (j + 1 < row.cols() ? ", " : "");
        os << "]";
        return os.str();
    }
};

namespace detail {

struct ConstrainedDesign {
    Mat p;
    double residual;
    bool schur;
    std::vector<double> eps;
    std::optional<double> bisected_scale;
    TerminalSetReport report;

    ConstrainedDesign() : p(1, 1) {}
};

/// Shared by design/simulate/verify: terminal weight from the Lyapunov
/// equation, terminal box (explicit or bisected), vertex certificate.
inline ConstrainedDesign design_constrained(const Scenario& sc, const LinearSystem& sys,
                                            const DeadbeatGain& gain) {
    ConstrainedDesign out;
    const Mat& k = *sc.gain_k;
    const Mat a_k = sc.a - sc.b * k;
    const Mat q_eff = sc.q + (k.transpose() * k) * sc.r;
    const auto lyap = solve_discrete_lyapunov(a_k, q_eff);
    if (!lyap)
        throw UnstableGain("stabilizing_gain does not stabilize A - BK: the Lyapunov equation "
                           "has no positive definite solution");
    out.p = lyap->p;
    out.residual = lyap->residual;
    out.schur = is_schur_stable(a_k);

    if (sc.constraints->terminal_halfwidth) {
        out.eps = *sc.constraints->terminal_halfwidth;
    } else {
        const ConstraintSpec base = make_constraint_spec(sc, std::vector<double>(sys.n(), 1.0));
        const auto scale = bisect_terminal_scale(sys, base, gain);
        if (!scale)
            throw TerminalSetUnverifiable(
                "terminal box bisection hit the floor " + std::to_string(kBisectionFloor) +
                " without certifying; the deadbeat orbit violates the constraints arbitrarily "
                "close to the origin");
        out.bisected_scale = *scale;
        out.eps.assign(sys.n(), *scale);
    }
    out.report = verify_terminal_set(sys, make_constraint_spec(sc, out.eps), gain);
    return out;
}

} // namespace detail

/// Design stage: deadbeat gain and nilpotency certificate, plus (for
/// constrained scenarios) the Lyapunov terminal weight, Schur certificate and
/// terminal-box certificate or bisected size.
inline DesignReport cmd_design(const Scenario& sc) {
    const LinearSystem sys = make_system(sc);
    const DeadbeatGain gain = deadbeat_gain(sys);

    DesignReport report;
    report.n = sys.n();
    report.scenario_name = sc.name;
    report.k_db = gain.k_db;
    report.s_inv_first_row = gain.s_inv_first_row;
    report.nilpotency_index = gain.nilpotency_index;

    if (sc.kind == ControllerKind::Constrained) {
        auto design = detail::design_constrained(sc, sys, gain);
        report.p = design.p;
        report.lyap_residual = design.residual;
        report.schur_certified = design.schur;
        report.terminal_halfwidth = design.eps;
        report.bisected_scale = design.bisected_scale;
        report.terminal_report = std::move(design.report);
    }
    return report;
}

struct SimulationArtifacts {
    std::filesystem::path csv_path;
    std::filesystem::path svg_path;
    Trajectory trajectory;
};

/// Runs the closed loop for the scenario and writes the trajectory CSV and
/// SVG into out_dir (current directory by default). For constrained
/// scenarios the design stage runs first and must certify.
inline SimulationArtifacts cmd_simulate(const Scenario& sc,
                                        const std::optional<std::filesystem::path>& out_dir) {
    const LinearSystem sys = make_system(sc);
    const DeadbeatGain gain = deadbeat_gain(sys);
    const std::filesystem::path dir = out_dir.value_or(std::filesystem::path("."));
    std::filesystem::create_directories(dir);

    SimulationArtifacts artifacts;
    artifacts.csv_path = dir / sc.csv_name;
    artifacts.svg_path = dir / sc.svg_name;

    std::optional<double> u_min, u_max;
    if (sc.kind == ControllerKind::Constrained) {
        auto design = detail::design_constrained(sc, sys, gain);
        if (!design.report.certified)
            throw TerminalSetError("terminal box failed its certificate; run `design` for the "
                                   "violation report or use \"auto-bisect\"");
        const ConstraintSpec spec = make_constraint_spec(sc, design.eps);
        ConstrainedMpc mpc(sys, spec, design.p, gain, *sc.gain_k, WeightSpec(sc.q, sc.r));
        const Controller controller = make_constrained_controller(mpc);
        artifacts.trajectory = run_closed_loop(sys, controller, sc.x0, sc.steps, &spec);
        u_min = spec.u_min();
        u_max = spec.u_max();
        if (artifacts.trajectory.infeasible_at)
            log_info("controller infeasible at step " +
                     std::to_string(*artifacts.trajectory.infeasible_at));
    } else {
        Controller controller =
            sc.kind == ControllerKind::UnconstrainedEquality
                ? make_terminal_equality_controller(sys, WeightSpec(sc.q, sc.r))
                : make_terminal_cost_controller(sys, sc.q); // any PD weight; result P-independent
        artifacts.trajectory = run_closed_loop(sys, controller, sc.x0, sc.steps);
    }

    write_trajectory_csv(artifacts.csv_path, artifacts.trajectory, sys.n());
    write_trajectory_svg(artifacts.svg_path, artifacts.trajectory, sys.n(), u_min, u_max);
    return artifacts;
}

struct PropertyResult {
    enum class Status { Pass, Fail, Skip };
    std::string name;
    Status status = Status::Skip;
    std::string detail;
};

struct VerifyReport {
    std::vector<PropertyResult> results;

    bool all_passed() const {
        for (const auto& r : results)
            if (r.status == PropertyResult::Status::Fail) return false;
        return true;
    }

    std::string to_text() const {
        std::ostringstream os;
        for (const auto& r : results) {
            const char* tag = r.status == PropertyResult::Status::Pass   ? "PASS"
                              : r.status == PropertyResult::Status::Fail ? "FAIL"
                                                                         : "SKIP";
            os << tag << " " << r.name;
            if (!r.detail.empty()) os << " — " << r.detail;
            os << "\n";
        }
        return os.str();
    }
};

namespace detail {

inline std::string ratio_text(double v) {
    std::ostringstream os;
    os.precision(3);
    os << std::scientific << v;
    return os.str();
}

} // namespace detail

/// Seeded audit of the closed-loop guarantees: deadbeat settling in n
/// steps, nilpotency of A - B K_db, and (for constrained scenarios)
/// recursive feasibility with the shifted-candidate witness, per-step cost
/// decrease, the control decomposition identity and the perturbed-solution
/// identity. Returns one pass/fail/skip entry per property.
inline VerifyReport cmd_verify(const Scenario& sc,
                               std::optional<std::uint64_t> seed_override = std::nullopt) {
    const std::uint64_t seed = seed_override.value_or(sc.seed);
    const LinearSystem sys = make_system(sc);
    const DeadbeatGain gain = deadbeat_gain(sys);
    const std::size_t n = sys.n();
    VerifyReport report;

    { // deadbeat-in-n: scenario plant plus random systems
        SplitMix64 rng(seed * 2654435761ULL + 1);
        double worst = 0.0;
        std::size_t runs = 0;
        const auto run_one = [&](const LinearSystem& s, const Mat& x0) {
            const auto traj =
                run_closed_loop(s, make_deadbeat_controller(deadbeat_gain(s)), x0, 3 * s.n());
            const double scale = std::max(1e-300, x0.max_abs());
            for (const auto& st : traj.steps)
                if (st.k >= s.n()) worst = std::max(worst, st.x.max_abs() / scale);
            ++runs;
        };
        run_one(sys, sc.x0);
        for (int i = 0; i < 10; ++i) run_one(sys, random_vector(rng, n));
        for (int i = 0; i < 20; ++i) {
            const LinearSystem s = random_controllable_system(rng, 1 + rng.index(5));
            run_one(s, random_vector(rng, s.n()));
        }
        PropertyResult r;
        r.name = "deadbeat-in-n";
        r.status = worst <= 1e-6 ? PropertyResult::Status::Pass : PropertyResult::Status::Fail;
        r.detail = std::to_string(runs) + " runs, worst post-n norm ratio " +
                   detail::ratio_text(worst);
        report.results.push_back(std::move(r));
    }

    { // nilpotency of A - B K_db
        SplitMix64 rng(seed * 2654435761ULL + 2);
        bool ok = gain.nilpotency_index <= n;
        std::string detail_text =
            "index " + std::to_string(gain.nilpotency_index) + " (n = " + std::to_string(n) + ")";
        for (int i = 0; i < 20 && ok; ++i) {
            const LinearSystem s = random_controllable_system(rng, 1 + rng.index(5));
            const auto g = deadbeat_gain(s);
            const auto idx = nilpotency_index(s, g.k_db);
            if (!idx || *idx > s.n()) {
                ok = false;
                detail_text = "random system of dimension " + std::to_string(s.n()) + " failed";
            }
        }
        if (ok) detail_text += ", 20 random systems within bound";
        PropertyResult r;
        r.name = "nilpotency";
        r.status = ok ? PropertyResult::Status::Pass : PropertyResult::Status::Fail;
        r.detail = std::move(detail_text);
        report.results.push_back(std::move(r));
    }

    if (sc.kind != ControllerKind::Constrained) {
        for (const char* name : {"recursive-feasibility", "cost-decrease",
                                 "control-decomposition", "perturbed-solution-identity"}) {
            PropertyResult r;
            r.name = name;
            r.status = PropertyResult::Status::Skip;
            r.detail = "constrained scenarios only";
            report.results.push_back(std::move(r));
        }
        return report;
    }

    auto design = detail::design_constrained(sc, sys, gain);
    if (!design.report.certified)
        throw TerminalSetError("terminal box failed its certificate; cannot audit the "
                               "constrained properties");
    const ConstraintSpec spec = make_constraint_spec(sc, design.eps);

    SplitMix64 rng(seed * 2654435761ULL + 3);
    bool feasibility_ok = true, candidate_ok = true, cost_ok = true;
    bool decomposition_ok = true, perturbed_ok = true;
    bool cost_asserted = false;
    std::string feasibility_note;
    double max_cost_increase = -std::numeric_limits<double>::infinity();
    double worst_decomposition = 0.0, worst_perturbed = 0.0;
    std::size_t total_steps = 0;

    const Mat a_db = sys.a() - sys.b() * gain.k_db;
    std::vector<Mat> impulse_columns; // A_db^{n-1-i} B
    for (std::size_t i = 0; i < n; ++i)
        impulse_columns.push_back(mat_pow(a_db, n - 1 - i) * sys.b());

    for (int run = 0; run < 12 && feasibility_ok; ++run) {
        ConstrainedMpc mpc(sys, spec, design.p, gain, *sc.gain_k, WeightSpec(sc.q, sc.r));
        cost_asserted = mpc.p_built_from_deadbeat_gain();

        Mat x0 = sc.x0;
        if (run > 0) {
            // rejection-sample a feasible start near the scenario's scale
            const double mag = std::max(1.0, sc.x0.max_abs());
            bool found = false;
            for (int attempt = 0; attempt < 100 && !found; ++attempt) {
                x0 = random_vector(rng, n, mag);
                ConstrainedMpc probe(sys, spec, design.p, gain);
                found = controller_step(probe, x0).feasible;
            }
            if (!found) continue; // nothing feasible at this scale; skip the run
        }

        Mat x = x0;
        std::optional<StepResult> prev;
        std::vector<Mat> terminal_history;
        for (std::size_t k = 0; k <= sc.steps; ++k) {
            const StepResult res = controller_step(mpc, x);
            if (!res.feasible) {
                if (k == 0) {
                    feasibility_note = "initially infeasible at run " + std::to_string(run) +
                                       " (phase-1 found no point)";
                } else {
                    feasibility_note =
                        "lost feasibility at step " + std::to_string(k) + " after a feasible step";
                }
                feasibility_ok = false;
                break;
            }
            ++total_steps;
            terminal_history.push_back(res.terminal_state);

            // control decomposition: u = -K_db x + S_n^T x*(n|k)
            const double recomposed = -(gain.k_db * x)(0, 0) +
                                      (gain.s_inv_first_row * res.terminal_state)(0, 0);
            worst_decomposition =
                std::max(worst_decomposition, std::abs(res.u_applied - recomposed));

            if (prev) {
                const auto cand = verify_shifted_candidate(mpc, *prev);
                if (!cand.stage_feasible) candidate_ok = false;
                const auto cost = cost_decrease_check(mpc, *prev, res);
                max_cost_increase = std::max(max_cost_increase, cost.change);
                if (cost.violation) cost_ok = false;
            }
            prev = res;
            x = step(sys, x, res.u_applied);

            // perturbed-solution identity for k+1 >= n
            const std::size_t next_k = k + 1;
            if (next_k >= n && terminal_history.size() >= n) {
                Mat reconstructed(n, 1);
                for (std::size_t i = 0; i < n; ++i) {
                    const Mat& t = terminal_history[next_k - n + i];
                    reconstructed =
                        reconstructed +
                        impulse_columns[i] * (gain.s_inv_first_row * t)(0, 0);
                }
                const double err =
                    (x - reconstructed).max_abs() / std::max(1.0, x.max_abs());
                worst_perturbed = std::max(worst_perturbed, err);
            }
        }
    }
    if (worst_decomposition > 1e-7) decomposition_ok = false;
    if (worst_perturbed > 1e-6) perturbed_ok = false;

    PropertyResult rf;
    rf.name = "recursive-feasibility";
    rf.status = (feasibility_ok && candidate_ok) ? PropertyResult::Status::Pass
                                                 : PropertyResult::Status::Fail;
    rf.detail = feasibility_ok
                    ? std::to_string(total_steps) + " steps, shifted candidate verified" +
                          (candidate_ok ? "" : " (stage violation)")
                    : feasibility_note;
    report.results.push_back(std::move(rf));

    PropertyResult cd;
    cd.name = "cost-decrease";
    cd.status = cost_ok ? PropertyResult::Status::Pass : PropertyResult::Status::Fail;
    cd.detail = "max J* increase " + detail::ratio_text(max_cost_increase) +
                (cost_asserted ? " (asserted: P built from K_db)"
                               : " (reported: P built from K != K_db)");
    report.results.push_back(std::move(cd));

    PropertyResult de;
    de.name = "control-decomposition";
    de.status = decomposition_ok ? PropertyResult::Status::Pass : PropertyResult::Status::Fail;
    de.detail = "worst residual " + detail::ratio_text(worst_decomposition) + " (tolerance 1e-07)";
    report.results.push_back(std::move(de));

    PropertyResult pe;
    pe.name = "perturbed-solution-identity";
    pe.status = perturbed_ok ? PropertyResult::Status::Pass : PropertyResult::Status::Fail;
    pe.detail =
        "worst relative error " + detail::ratio_text(worst_perturbed) + " (tolerance 1e-06)";
    report.results.push_back(std::move(pe));

    return report;
}

} // namespace dbmpc
