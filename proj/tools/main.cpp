#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dbmpc/cli.hpp"
#include "dbmpc/version.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitInfeasible = 2;
constexpr int kExitPropertyFailure = 3;

int run_design(const std::string& path) {
    const dbmpc::Scenario sc = dbmpc::load_scenario(path);
    const dbmpc::DesignReport report = dbmpc::cmd_design(sc);
    std::cout << report.to_text();
    return report.certified() ? kExitOk : kExitValidation;
}

int run_simulate(const std::string& path, const std::optional<std::string>& out_dir) {
    const dbmpc::Scenario sc = dbmpc::load_scenario(path);
    std::optional<std::filesystem::path> dir;
    if (out_dir) dir = *out_dir;
    const dbmpc::SimulationArtifacts artifacts = dbmpc::cmd_simulate(sc, dir);
    std::cout << "trajectory: " << artifacts.csv_path.string() << "\n";
    std::cout << "plot:       " << artifacts.svg_path.string() << "\n";
    if (artifacts.trajectory.infeasible_at) {
        std::cout << "controller infeasible at step " << *artifacts.trajectory.infeasible_at
                  << "; partial trajectory written\n";
        return kExitInfeasible;
    }
    if (artifacts.trajectory.settled_at)
        std::cout << "settled at k = " << *artifacts.trajectory.settled_at << "\n";
    return kExitOk;
}

int run_verify(const std::string& path, const std::optional<std::uint64_t>& seed) {
    const dbmpc::Scenario sc = dbmpc::load_scenario(path);
    const dbmpc::VerifyReport report = dbmpc::cmd_verify(sc, seed);
    std::cout << report.to_text();
    return report.all_passed() ? kExitOk : kExitPropertyFailure;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"deadbeat model predictive control: design, simulate, verify"};
    app.set_version_flag("--version", std::string("dbmpc ") + dbmpc::kVersion);
    app.require_subcommand(1);

    std::string scenario_path;
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed;

    auto* design = app.add_subcommand("design", "compute gains, terminal weight and certificates");
    design->add_option("scenario", scenario_path, "scenario JSON file")
        ->required()
        ->check(CLI::ExistingFile);

    auto* simulate = app.add_subcommand("simulate", "run the closed loop; write CSV and SVG");
    simulate->add_option("scenario", scenario_path, "scenario JSON file")
        ->required()
        ->check(CLI::ExistingFile);
    simulate->add_option("--out", out_dir, "output directory (default: current)");

    auto* verify = app.add_subcommand("verify", "run the seeded property audit");
    verify->add_option("scenario", scenario_path, "scenario JSON file")
        ->required()
        ->check(CLI::ExistingFile);
    verify->add_option("--seed", seed, "override the scenario seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (design->parsed()) return run_design(scenario_path);
        if (simulate->parsed()) return run_simulate(scenario_path, out_dir);
        if (verify->parsed()) return run_verify(scenario_path, seed);
    } catch (const dbmpc::QpIterationLimit& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInfeasible;
    } catch (const dbmpc::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
    return kExitValidation;
}
