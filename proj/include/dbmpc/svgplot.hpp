#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "dbmpc/csvio.hpp"
#include "dbmpc/simkit.hpp"

namespace dbmpc {

namespace detail {

struct PlotFrame {
    double x0, y0, width, height; // pixel box
    double lo, hi;                // data range on the y axis
    std::size_t steps;

    double px(double k) const {
        return steps <= 1 ? x0 : x0 + width * (k / static_cast<double>(steps - 1));
    }
    double py(double v) const { return y0 + height * (1.0 - (v - lo) / (hi - lo)); }
};

inline void pad_range(double& lo, double& hi) {
    if (hi - lo < 1e-12) {
        lo -= 1.0;
        hi += 1.0;
    } else {
        const double pad = 0.08 * (hi - lo);
        lo -= pad;
        hi += pad;
    }
}

inline std::string svg_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

inline void draw_axes(std::ofstream& out, const PlotFrame& f, const std::string& title) {
    out << "<rect x='" << svg_num(f.x0) << "' y='" << svg_num(f.y0) << "' width='"
        << svg_num(f.width) << "' height='" << svg_num(f.height)
        << "' fill='white' stroke='#444' stroke-width='1'/>\n";
    out << "<text x='" << svg_num(f.x0 + 4) << "' y='" << svg_num(f.y0 + 14)
        << "' font-family='monospace' font-size='12' fill='#222'>" << title << "</text>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = f.lo + (f.hi - f.lo) * t / 4.0;
        const double y = f.py(v);
        out << "<line x1='" << svg_num(f.x0) << "' y1='" << svg_num(y) << "' x2='"
            << svg_num(f.x0 + f.width) << "' y2='" << svg_num(y)
            << "' stroke='#ddd' stroke-width='0.5'/>\n";
        out << "<text x='" << svg_num(f.x0 - 6) << "' y='" << svg_num(y + 4)
            << "' text-anchor='end' font-family='monospace' font-size='10' fill='#555'>"
            << format_double(v).substr(0, 9) << "</text>\n";
    }
    if (f.steps > 1) {
        const std::size_t tick = std::max<std::size_t>(1, (f.steps - 1) / 10);
        for (std::size_t k = 0; k < f.steps; k += tick) {
            const double x = f.px(static_cast<double>(k));
            out << "<text x='" << svg_num(x) << "' y='" << svg_num(f.y0 + f.height + 14)
                << "' text-anchor='middle' font-family='monospace' font-size='10' fill='#555'>"
                << k << "</text>\n";
        }
    }
}

inline void draw_polyline(std::ofstream& out, const PlotFrame& f, const std::vector<double>& ys,
                          const std::string& color, bool dashed = false) {
    out << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5'";
    if (dashed) out << " stroke-dasharray='6,4'";
    out << " points='";
    for (std::size_t k = 0; k < ys.size(); ++k)
        out << svg_num(f.px(static_cast<double>(k))) << "," << svg_num(f.py(ys[k])) << " ";
    out << "'/>\n";
}

} // namespace detail

/// Self-contained 900x600 SVG with two stacked panels: states over k on top,
/// the applied control (with dashed bound lines when given) below.
inline void write_trajectory_svg(const std::filesystem::path& path, const Trajectory& traj,
                                 std::size_t n, std::optional<double> u_min = std::nullopt,
                                 std::optional<double> u_max = std::nullopt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());

    const std::size_t steps = traj.steps.size();
    std::vector<std::vector<double>> states(n, std::vector<double>(steps));
    std::vector<double> controls(steps);
    double s_lo = 0.0, s_hi = 0.0, u_lo = 0.0, u_hi = 0.0;
    for (std::size_t k = 0; k < steps; ++k) {
        for (std::size_t i = 0; i < n; ++i) {
            states[i][k] = traj.steps[k].x(i, 0);
            s_lo = std::min(s_lo, states[i][k]);
            s_hi = std::max(s_hi, states[i][k]);
        }
        controls[k] = traj.steps[k].u;
        u_lo = std::min(u_lo, controls[k]);
        u_hi = std::max(u_hi, controls[k]);
    }
    if (u_min) u_lo = std::min(u_lo, *u_min);
    if (u_max) u_hi = std::max(u_hi, *u_max);
    detail::pad_range(s_lo, s_hi);
    detail::pad_range(u_lo, u_hi);

    out << "<svg xmlns='http://www.w3.org/2000/svg' width='900' height='600' "
           "viewBox='0 0 900 600'>\n";
    out << "<rect width='900' height='600' fill='#fafafa'/>\n";

    const detail::PlotFrame top{70, 30, 790, 235, s_lo, s_hi, steps};
    const detail::PlotFrame bottom{70, 330, 790, 235, u_lo, u_hi, steps};
    detail::draw_axes(out, top, "states x(k)");
    detail::draw_axes(out, bottom, "control u(k)");

    static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                     "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
    for (std::size_t i = 0; i < n; ++i) {
        const std::string color = kPalette[i % 8];
        detail::draw_polyline(out, top, states[i], color);
        out << "<text x='" << detail::svg_num(74 + 42 * static_cast<double>(i)) << "' y='58' "
            << "font-family='monospace' font-size='11' fill='" << color << "'>x" << (i + 1)
            << "</text>\n";
    }
    detail::draw_polyline(out, bottom, controls, "#1f77b4");
    if (u_min)
        detail::draw_polyline(out, bottom, std::vector<double>(steps, *u_min), "#d62728", true);
    if (u_max)
        detail::draw_polyline(out, bottom, std::vector<double>(steps, *u_max), "#d62728", true);

    out << "</svg>\n";
    if (!out) throw IoError("write failed: " + path.string());
}

} // namespace dbmpc
