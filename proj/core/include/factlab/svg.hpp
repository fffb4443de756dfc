#pragma once

#include <string>
#include <vector>

namespace factlab {

// Self-contained SVG charts with the plotted values embedded as a comment, so
// every figure is diffable and carries its own data. Output is deterministic
// for fixed input.

struct SvgSeries {
    std::string label;
    std::string color;  // css color
    bool dashed = false;
    std::vector<double> x, y;
};

struct SvgAxes {
    std::string title;
    std::string x_label, y_label;
    // y range; when y_min == y_max the range is derived from the data
    double y_min = 0.0, y_max = 0.0;
};

std::string svg_line_chart(const SvgAxes& axes, const std::vector<SvgSeries>& series);

// Grouped bars: one group per category, one bar per series label.
struct SvgBarGroup {
    std::string category;
    std::vector<double> values; // one per series label
};

std::string svg_bar_chart(const SvgAxes& axes, const std::vector<std::string>& series_labels,
                          const std::vector<std::string>& series_colors,
                          const std::vector<SvgBarGroup>& groups);

// Diverging heatmap centered at zero: blue negative, red positive. When
// fixed_range > 0, the scale is [-fixed_range, +fixed_range]; otherwise it is
// symmetric around the largest |value|.
std::string svg_heatmap(const std::vector<double>& grid, int rows, int cols, double fixed_range,
                        const std::string& title);

// Horizontal concatenation of already-rendered charts into one document.
std::string svg_panel_row(const std::vector<std::string>& panels);

// Color helper exposed for tests: diverging blue-white-red at t in [-1, 1].
std::string diverging_color(double t);

} // namespace factlab
