#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dbmpc/lti.hpp"
#include "dbmpc/matrix.hpp"

namespace dbmpc {

/// A scenario file could not be parsed or failed validation; the message
/// names the offending field.
class ScenarioError : public Error {
public:
    using Error::Error;
};

enum class ControllerKind { UnconstrainedEquality, UnconstrainedTerminalCost, Constrained };

struct ScenarioConstraints {
    std::optional<Mat> state_h;
    std::vector<double> state_rhs;
    double u_min = -1.0;
    double u_max = 1.0;
    std::optional<std::vector<double>> terminal_halfwidth; // nullopt = auto-bisect
};

/// Everything a command needs: plant, weights, controller kind, constraint
/// data, initial state, run length and output names.
struct Scenario {
    std::string name;
    Mat a;
    Mat b;
    Mat q;
    double r = 1.0;
    ControllerKind kind = ControllerKind::UnconstrainedEquality;
    std::optional<Mat> gain_k; // stabilizing gain for the terminal weight
    std::optional<ScenarioConstraints> constraints;
    Mat x0;
    std::size_t steps = 1;
    std::uint64_t seed = 0;
    std::string csv_name;
    std::string svg_name;

    Scenario() : a(1, 1), b(1, 1), q(1, 1), x0(1, 1) {}

    std::size_t n() const { return a.rows(); }
};

namespace detail {

using nlohmann::json;

inline const json& require_field(const json& j, const std::string& key, const std::string& path) {
    if (!j.is_object())
        throw ScenarioError(path + ": expected an object");
    auto it = j.find(key);
    if (it == j.end()) throw ScenarioError(path + "." + key + ": missing required field");
    return *it;
}

inline double as_number(const json& j, const std::string& path) {
    if (!j.is_number()) throw ScenarioError(path + ": expected a number");
    return j.get<double>();
}

inline std::vector<double> as_vector(const json& j, const std::string& path) {
    if (!j.is_array() || j.empty())
        throw ScenarioError(path + ": expected a non-empty array of numbers");
    std::vector<double> out;
    out.reserve(j.size());
    for (std::size_t i = 0; i < j.size(); ++i)
        out.push_back(as_number(j[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

inline Mat as_matrix(const json& j, const std::string& path) {
    if (!j.is_array() || j.empty()) throw ScenarioError(path + ": expected an array of rows");
    const std::size_t rows = j.size();
    std::size_t cols = 0;
    std::vector<double> data;
    for (std::size_t i = 0; i < rows; ++i) {
        const std::string row_path = path + "[" + std::to_string(i) + "]";
        const auto row = as_vector(j[i], row_path);
        if (i == 0)
            cols = row.size();
        else if (row.size() != cols)
            throw ScenarioError(row_path + ": has " + std::to_string(row.size()) +
                                " entries, expected " + std::to_string(cols));
        data.insert(data.end(), row.begin(), row.end());
    }
    try {
        return Mat(rows, cols, std::move(data));
    } catch (const NonFiniteEntry&) {
        throw ScenarioError(path + ": contains a non-finite value");
    }
}

inline std::string sanitized(const std::string& name) {
    std::string out;
    for (char c : name) out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
    return out.empty() ? std::string("scenario") : out;
}

} // namespace detail

inline Scenario parse_scenario(const nlohmann::json& root) {
    using detail::as_matrix;
    using detail::as_number;
    using detail::as_vector;
    using detail::require_field;

    Scenario sc;
    const auto& name_field = require_field(root, "name", "scenario");
    if (!name_field.is_string()) throw ScenarioError("scenario.name: expected a string");
    sc.name = name_field.get<std::string>();

    const auto& plant = require_field(root, "plant", "scenario");
    sc.a = as_matrix(require_field(plant, "a", "scenario.plant"), "scenario.plant.a");
    if (!sc.a.is_square())
        throw ScenarioError("scenario.plant.a: expected a square matrix, got " + sc.a.shape_str());
    const std::size_t n = sc.a.rows();
    const auto b = as_vector(require_field(plant, "b", "scenario.plant"), "scenario.plant.b");
    if (b.size() != n)
        throw ScenarioError("scenario.plant.b: has " + std::to_string(b.size()) +
                            " entries, expected " + std::to_string(n));
    sc.b = Mat::col_vec(b);

    const auto& weights = require_field(root, "weights", "scenario");
    sc.q = as_matrix(require_field(weights, "q", "scenario.weights"), "scenario.weights.q");
    if (sc.q.rows() != n || sc.q.cols() != n)
        throw ScenarioError("scenario.weights.q: expected " + std::to_string(n) + "x" +
                            std::to_string(n) + ", got " + sc.q.shape_str());
    sc.r = as_number(require_field(weights, "r", "scenario.weights"), "scenario.weights.r");
    if (!(sc.r > 0.0)) throw ScenarioError("scenario.weights.r: must be positive");

    const auto& kind_field = require_field(root, "controller", "scenario");
    if (!kind_field.is_string()) throw ScenarioError("scenario.controller: expected a string");
    const std::string kind = kind_field.get<std::string>();
    if (kind == "unconstrained-equality")
        sc.kind = ControllerKind::UnconstrainedEquality;
    else if (kind == "unconstrained-terminal-cost")
        sc.kind = ControllerKind::UnconstrainedTerminalCost;
    else if (kind == "constrained")
        sc.kind = ControllerKind::Constrained;
    else
        throw ScenarioError("scenario.controller: unknown kind \"" + kind +
                            "\" (expected unconstrained-equality, unconstrained-terminal-cost "
                            "or constrained)");

    if (root.contains("stabilizing_gain")) {
        const auto gain = as_vector(root["stabilizing_gain"], "scenario.stabilizing_gain");
        if (gain.size() != n)
            throw ScenarioError("scenario.stabilizing_gain: has " + std::to_string(gain.size()) +
                                " entries, expected " + std::to_string(n));
        sc.gain_k = Mat::row_vec(gain);
    }

    if (root.contains("constraints")) {
        const auto& cj = root["constraints"];
        ScenarioConstraints cons;
        if (cj.contains("state_h") != cj.contains("state_rhs"))
            throw ScenarioError("scenario.constraints: state_h and state_rhs must come together");
        if (cj.contains("state_h")) {
            cons.state_h = as_matrix(cj["state_h"], "scenario.constraints.state_h");
            if (cons.state_h->cols() != n)
                throw ScenarioError("scenario.constraints.state_h: expected " + std::to_string(n) +
                                    " columns, got " + std::to_string(cons.state_h->cols()));
            cons.state_rhs = as_vector(cj["state_rhs"], "scenario.constraints.state_rhs");
            if (cons.state_rhs.size() != cons.state_h->rows())
                throw ScenarioError(
                    "scenario.constraints.state_rhs: length does not match state_h rows");
        }
        cons.u_min = as_number(require_field(cj, "u_min", "scenario.constraints"),
                               "scenario.constraints.u_min");
        cons.u_max = as_number(require_field(cj, "u_max", "scenario.constraints"),
                               "scenario.constraints.u_max");
        if (!(cons.u_min < 0.0 && 0.0 < cons.u_max))
            throw ScenarioError("scenario.constraints: u_min < 0 < u_max is required");
        const auto& term = require_field(cj, "terminal_halfwidth", "scenario.constraints");
        if (term.is_string()) {
            if (term.get<std::string>() != "auto-bisect")
                throw ScenarioError("scenario.constraints.terminal_halfwidth: expected an array "
                                    "or the string \"auto-bisect\"");
        } else {
            auto eps = as_vector(term, "scenario.constraints.terminal_halfwidth");
            if (eps.size() != n)
                throw ScenarioError("scenario.constraints.terminal_halfwidth: has " +
                                    std::to_string(eps.size()) + " entries, expected " +
                                    std::to_string(n));
            for (double e : eps)
                if (!(e > 0.0))
                    throw ScenarioError(
                        "scenario.constraints.terminal_halfwidth: entries must be positive");
            cons.terminal_halfwidth = std::move(eps);
        }
        sc.constraints = std::move(cons);
    }

    if (sc.kind == ControllerKind::Constrained) {
        if (!sc.gain_k)
            throw ScenarioError("scenario.stabilizing_gain: required for constrained scenarios");
        if (!sc.constraints)
            throw ScenarioError("scenario.constraints: required for constrained scenarios");
    }

    const auto x0 = as_vector(require_field(root, "x0", "scenario"), "scenario.x0");
    if (x0.size() != n)
        throw ScenarioError("scenario.x0: has " + std::to_string(x0.size()) +
                            " entries, expected " + std::to_string(n));
    sc.x0 = Mat::col_vec(x0);

    const auto& steps = require_field(root, "steps", "scenario");
    if (!steps.is_number_unsigned() || steps.get<std::uint64_t>() < 1)
        throw ScenarioError("scenario.steps: expected a positive integer");
    sc.steps = steps.get<std::size_t>();

    if (root.contains("seed")) {
        if (!root["seed"].is_number_unsigned())
            throw ScenarioError("scenario.seed: expected a non-negative integer");
        sc.seed = root["seed"].get<std::uint64_t>();
    }

    sc.csv_name = detail::sanitized(sc.name) + "_trajectory.csv";
    sc.svg_name = detail::sanitized(sc.name) + "_trajectory.svg";
    if (root.contains("output")) {
        const auto& out = root["output"];
        if (out.contains("csv")) {
            if (!out["csv"].is_string())
                throw ScenarioError("scenario.output.csv: expected a string");
            sc.csv_name = out["csv"].get<std::string>();
        }
        if (out.contains("svg")) {
            if (!out["svg"].is_string())
                throw ScenarioError("scenario.output.svg: expected a string");
            sc.svg_name = out["svg"].get<std::string>();
        }
    }
    return sc;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ScenarioError("cannot open scenario file: " + path.string());
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ScenarioError("scenario " + path.string() + ": " + e.what());
    }
    return parse_scenario(root);
}

/// Plant from the scenario; throws UncontrollablePair for bad pairs.
inline LinearSystem make_system(const Scenario& sc) { return LinearSystem(sc.a, sc.b); }

/// ConstraintSpec with the given terminal box (resolves the auto-bisect case
/// where the halfwidths are decided by the caller).
inline ConstraintSpec make_constraint_spec(const Scenario& sc, std::vector<double> eps) {
    if (!sc.constraints) throw ScenarioError("scenario has no constraints section");
    return ConstraintSpec(sc.constraints->state_h, sc.constraints->state_rhs,
                          sc.constraints->u_min, sc.constraints->u_max, std::move(eps));
}

} // namespace dbmpc
