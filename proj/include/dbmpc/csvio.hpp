#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dbmpc/matrix.hpp"
#include "dbmpc/simkit.hpp"

namespace dbmpc {

class IoError : public Error {
public:
    using Error::Error;
};

namespace detail {

/// 17 significant digits: enough for an exact double round trip.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace detail

/// Writes the trajectory as CSV with header
///   k,x1,...,xn,u,objective,terminal_norm,active_set_size
/// Floats carry 17 significant digits; the three diagnostic columns are left
/// empty for steps without them (unconstrained runs).
inline void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj,
                                 std::size_t n) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "k";
    for (std::size_t i = 1; i <= n; ++i) out << ",x" << i;
    out << ",u,objective,terminal_norm,active_set_size\n";
    for (const auto& s : traj.steps) {
        out << s.k;
        for (std::size_t i = 0; i < n; ++i) out << "," << detail::format_double(s.x(i, 0));
        out << "," << detail::format_double(s.u);
        out << ",";
        if (s.objective) out << detail::format_double(*s.objective);
        out << ",";
        if (s.terminal_state) out << detail::format_double(s.terminal_state->max_abs());
        out << ",";
        if (s.active_set_size) out << *s.active_set_size;
        out << "\n";
    }
    if (!out) throw IoError("write failed: " + path.string());
}

struct CsvRow {
    std::size_t k = 0;
    std::vector<double> x;
    double u = 0.0;
    std::optional<double> objective;
    std::optional<double> terminal_norm;
    std::optional<std::size_t> active_set_size;
};

inline std::vector<CsvRow> read_trajectory_csv(const std::filesystem::path& path, std::size_t n) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty CSV: " + path.string());

    std::vector<CsvRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        while (fields.size() < n + 5) fields.emplace_back(); // trailing empties
        if (fields.size() != n + 5)
            throw IoError("CSV row has " + std::to_string(fields.size()) + " fields, expected " +
                          std::to_string(n + 5) + ": " + path.string());
        CsvRow row;
        row.k = static_cast<std::size_t>(std::stoull(fields[0]));
        row.x.resize(n);
        for (std::size_t i = 0; i < n; ++i) row.x[i] = std::stod(fields[1 + i]);
        row.u = std::stod(fields[1 + n]);
        if (!fields[2 + n].empty()) row.objective = std::stod(fields[2 + n]);
        if (!fields[3 + n].empty()) row.terminal_norm = std::stod(fields[3 + n]);
        if (!fields[4 + n].empty())
            row.active_set_size = static_cast<std::size_t>(std::stoull(fields[4 + n]));
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace dbmpc
