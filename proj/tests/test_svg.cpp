#include <doctest.h>

#include <string>

#include "factlab/svg.hpp"

using namespace factlab;

TEST_CASE("diverging color endpoints") {
    CHECK(diverging_color(0.0) == "#ffffff");
    CHECK(diverging_color(1.0) == "#a50026");
    CHECK(diverging_color(-1.0) == "#313695");
    CHECK(diverging_color(2.0) == diverging_color(1.0)); // clamped
}

TEST_CASE("line chart is deterministic and embeds its data") {
    SvgAxes axes;
    axes.title = "test";
    axes.x_label = "x";
    axes.y_label = "y";
    const std::vector<SvgSeries> series = {
        {"a", "#ff0000", false, {0, 1, 2}, {0.1, 0.5, 0.2}},
        {"b", "#0000ff", true, {0, 1, 2}, {0.9, 0.4, 0.6}},
    };
    const auto s1 = svg_line_chart(axes, series);
    const auto s2 = svg_line_chart(axes, series);
    CHECK(s1 == s2);
    CHECK(s1.rfind("<!-- schema: factlab.chart.v1 -->", 0) == 0);
    // chart data points equal the source values
    CHECK(s1.find("0\t0.1") != std::string::npos);
    CHECK(s1.find("2\t0.6") != std::string::npos);
    CHECK(s1.find("polyline") != std::string::npos);
    CHECK(s1.find("stroke-dasharray") != std::string::npos);
}

TEST_CASE("bar chart renders groups and legend") {
    SvgAxes axes;
    axes.title = "bars";
    axes.y_min = 0.0;
    axes.y_max = 1.0;
    const auto svg = svg_bar_chart(axes, {"one", "two"}, {"#111111", "#222222"},
                                   {{"base", {0.5, 0.25}}, {"tuned", {0.75, 0.1}}});
    CHECK(svg.find("base") != std::string::npos);
    CHECK(svg.find("tuned") != std::string::npos);
    CHECK(svg.find("0.75") != std::string::npos);
    CHECK(svg.find("<rect") != std::string::npos);
}

TEST_CASE("panel row concatenates charts") {
    SvgAxes axes;
    axes.title = "p";
    const auto panel = svg_line_chart(axes, {{"s", "#000000", false, {0, 1}, {0, 1}}});
    const auto row = svg_panel_row({panel, panel});
    CHECK(row.find("translate(460,0)") != std::string::npos);
    CHECK(row.rfind("<!-- schema: factlab.chart.v1 -->", 0) == 0);
}
