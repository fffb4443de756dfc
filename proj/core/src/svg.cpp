#include "factlab/svg.hpp"

#include <algorithm>
#include <cmath>

#include "factlab/common.hpp"

namespace factlab {

namespace {

constexpr int kW = 460, kH = 320;
constexpr int kMarginL = 56, kMarginR = 16, kMarginT = 34, kMarginB = 44;

std::string num(double v) { return fmt_g(v, 6); }

std::string esc(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out += c;
        }
    }
    return out;
}

struct Scale {
    double lo, hi;
    double px0, px1;
    double operator()(double v) const {
        if (hi == lo) return 0.5 * (px0 + px1);
        return px0 + (v - lo) / (hi - lo) * (px1 - px0);
    }
};

void header(std::string& s, int w, int h) {
    s += "<!-- schema: factlab.chart.v1 -->\n";
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) +
         "\" height=\"" + std::to_string(h) + "\" viewBox=\"0 0 " + std::to_string(w) + " " +
         std::to_string(h) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    s += "<rect width=\"" + std::to_string(w) + "\" height=\"" + std::to_string(h) +
         "\" fill=\"white\"/>\n";
}

void axes_frame(std::string& s, const SvgAxes& axes, const Scale& sx, const Scale& sy) {
    s += "<line x1=\"" + num(sx.px0) + "\" y1=\"" + num(sy.px0) + "\" x2=\"" + num(sx.px1) +
         "\" y2=\"" + num(sy.px0) + "\" stroke=\"#333\"/>\n";
    s += "<line x1=\"" + num(sx.px0) + "\" y1=\"" + num(sy.px0) + "\" x2=\"" + num(sx.px0) +
         "\" y2=\"" + num(sy.px1) + "\" stroke=\"#333\"/>\n";
    s += "<text x=\"" + std::to_string(kW / 2) + "\" y=\"16\" text-anchor=\"middle\">" +
         esc(axes.title) + "</text>\n";
    s += "<text x=\"" + std::to_string(kW / 2) + "\" y=\"" + std::to_string(kH - 8) +
         "\" text-anchor=\"middle\" fill=\"#333\">" + esc(axes.x_label) + "</text>\n";
    s += "<text x=\"14\" y=\"" + std::to_string(kH / 2) + "\" text-anchor=\"middle\" fill=\"#333\"" +
         " transform=\"rotate(-90 14 " + std::to_string(kH / 2) + ")\">" + esc(axes.y_label) +
         "</text>\n";
    // y ticks
    for (int i = 0; i <= 4; ++i) {
        const double v = sy.lo + (sy.hi - sy.lo) * i / 4.0;
        const double y = sy(v);
        s += "<line x1=\"" + num(sx.px0 - 3) + "\" y1=\"" + num(y) + "\" x2=\"" + num(sx.px0) +
             "\" y2=\"" + num(y) + "\" stroke=\"#333\"/>\n";
        s += "<text x=\"" + num(sx.px0 - 6) + "\" y=\"" + num(y + 3) +
             "\" text-anchor=\"end\">" + num(v) + "</text>\n";
    }
}

} // namespace

std::string diverging_color(double t) {
    t = std::clamp(t, -1.0, 1.0);
    // -1 -> blue (49,54,149), 0 -> white, +1 -> red (165,0,38)
    int r, g, b;
    if (t < 0) {
        const double u = -t;
        r = static_cast<int>(std::lround(255 + (49 - 255) * u));
        g = static_cast<int>(std::lround(255 + (54 - 255) * u));
        b = static_cast<int>(std::lround(255 + (149 - 255) * u));
    } else {
        r = static_cast<int>(std::lround(255 + (165 - 255) * t));
        g = static_cast<int>(std::lround(255 + (0 - 255) * t));
        b = static_cast<int>(std::lround(255 + (38 - 255) * t));
    }
    char buf[8];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
    return std::string(buf);
}

std::string svg_line_chart(const SvgAxes& axes, const std::vector<SvgSeries>& series) {
    double x_lo = 0, x_hi = 1, y_lo = axes.y_min, y_hi = axes.y_max;
    bool first = true;
    for (const auto& s : series) {
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (first) {
                x_lo = x_hi = s.x[i];
                first = false;
            }
            x_lo = std::min(x_lo, s.x[i]);
            x_hi = std::max(x_hi, s.x[i]);
        }
    }
    if (axes.y_min == axes.y_max) {
        y_lo = 1e300;
        y_hi = -1e300;
        for (const auto& s : series)
            for (double v : s.y) {
                y_lo = std::min(y_lo, v);
                y_hi = std::max(y_hi, v);
            }
        if (y_lo > y_hi) {
            y_lo = 0;
            y_hi = 1;
        }
        const double pad = (y_hi - y_lo) * 0.05 + 1e-12;
        y_lo -= pad;
        y_hi += pad;
    }

    const Scale sx{x_lo, x_hi, kMarginL, kW - kMarginR};
    const Scale sy{y_lo, y_hi, kH - kMarginB, kMarginT};

    std::string out;
    header(out, kW, kH);
    out += "<!-- data:\n";
    for (const auto& s : series) {
        out += "series\t" + s.label + "\n";
        for (size_t i = 0; i < s.x.size(); ++i)
            out += num(s.x[i]) + "\t" + num(s.y[i]) + "\n";
    }
    out += "-->\n";
    axes_frame(out, axes, sx, sy);

    int legend_y = kMarginT + 4;
    for (const auto& s : series) {
        if (s.x.empty()) continue;
        std::string pts;
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (i) pts += ' ';
            pts += num(sx(s.x[i])) + "," + num(sy(s.y[i]));
        }
        out += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"1.8\"";
        if (s.dashed) out += " stroke-dasharray=\"5,4\"";
        out += " points=\"" + pts + "\"/>\n";
        for (size_t i = 0; i < s.x.size(); ++i) {
            out += "<circle cx=\"" + num(sx(s.x[i])) + "\" cy=\"" + num(sy(s.y[i])) +
                   "\" r=\"2.2\" fill=\"" + s.color + "\"/>\n";
        }
        out += "<text x=\"" + std::to_string(kW - kMarginR - 4) + "\" y=\"" +
               std::to_string(legend_y) + "\" text-anchor=\"end\" fill=\"" + s.color + "\">" +
               esc(s.label) + "</text>\n";
        legend_y += 14;
    }
    out += "</svg>\n";
    return out;
}

std::string svg_bar_chart(const SvgAxes& axes, const std::vector<std::string>& series_labels,
                          const std::vector<std::string>& series_colors,
                          const std::vector<SvgBarGroup>& groups) {
    double y_lo = axes.y_min, y_hi = axes.y_max;
    if (y_lo == y_hi) {
        y_lo = 0.0;
        y_hi = 1e-12;
        for (const auto& g : groups)
            for (double v : g.values) y_hi = std::max(y_hi, v);
        y_hi *= 1.08;
    }
    const Scale sy{y_lo, y_hi, kH - kMarginB, kMarginT};
    const double plot_w = kW - kMarginL - kMarginR;
    const size_t n_groups = groups.size();
    const size_t n_series = series_labels.size();
    const double group_w = plot_w / std::max<size_t>(1, n_groups);
    const double bar_w = group_w * 0.8 / std::max<size_t>(1, n_series);

    std::string out;
    header(out, kW, kH);
    out += "<!-- data:\n";
    for (const auto& g : groups) {
        out += g.category;
        for (double v : g.values) out += "\t" + num(v);
        out += "\n";
    }
    out += "-->\n";
    const Scale sx{0.0, 1.0, kMarginL, kW - kMarginR};
    axes_frame(out, axes, sx, sy);

    for (size_t gi = 0; gi < n_groups; ++gi) {
        const double gx = kMarginL + group_w * gi + group_w * 0.1;
        for (size_t si = 0; si < n_series && si < groups[gi].values.size(); ++si) {
            const double v = groups[gi].values[si];
            const double y = sy(v);
            const double base = sy(std::max(y_lo, 0.0));
            out += "<rect x=\"" + num(gx + bar_w * si) + "\" y=\"" + num(std::min(y, base)) +
                   "\" width=\"" + num(bar_w * 0.92) + "\" height=\"" +
                   num(std::fabs(base - y)) + "\" fill=\"" + series_colors[si] + "\"/>\n";
        }
        out += "<text x=\"" + num(gx + group_w * 0.4) + "\" y=\"" +
               std::to_string(kH - kMarginB + 14) + "\" text-anchor=\"middle\">" +
               esc(groups[gi].category) + "</text>\n";
    }
    int legend_y = kMarginT + 4;
    for (size_t si = 0; si < n_series; ++si) {
        out += "<rect x=\"" + std::to_string(kW - kMarginR - 90) + "\" y=\"" +
               std::to_string(legend_y - 8) + "\" width=\"9\" height=\"9\" fill=\"" +
               series_colors[si] + "\"/>\n";
        out += "<text x=\"" + std::to_string(kW - kMarginR - 78) + "\" y=\"" +
               std::to_string(legend_y) + "\">" + esc(series_labels[si]) + "</text>\n";
        legend_y += 14;
    }
    out += "</svg>\n";
    return out;
}

std::string svg_heatmap(const std::vector<double>& grid, int rows, int cols, double fixed_range,
                        const std::string& title) {
    double range = fixed_range;
    if (range <= 0.0) {
        for (double v : grid) range = std::max(range, std::fabs(v));
        if (range == 0.0) range = 1.0;
    }
    const int cell = std::max(10, std::min(26, 360 / std::max(rows, cols)));
    const int w = kMarginL + cols * cell + kMarginR;
    const int h = kMarginT + rows * cell + kMarginB;

    std::string out;
    header(out, w, h);
    out += "<!-- data: range=" + num(range) + "\n";
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            if (c) out += '\t';
            out += num(grid[static_cast<size_t>(r) * cols + c]);
        }
        out += '\n';
    }
    out += "-->\n";
    out += "<text x=\"" + std::to_string(w / 2) + "\" y=\"16\" text-anchor=\"middle\">" +
           esc(title) + "</text>\n";
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const double v = grid[static_cast<size_t>(r) * cols + c];
            out += "<rect x=\"" + std::to_string(kMarginL + c * cell) + "\" y=\"" +
                   std::to_string(kMarginT + r * cell) + "\" width=\"" + std::to_string(cell) +
                   "\" height=\"" + std::to_string(cell) + "\" fill=\"" +
                   diverging_color(v / range) + "\" stroke=\"#ddd\" stroke-width=\"0.5\"/>\n";
        }
        out += "<text x=\"" + std::to_string(kMarginL - 6) + "\" y=\"" +
               std::to_string(kMarginT + r * cell + cell / 2 + 4) +
               "\" text-anchor=\"end\">L" + std::to_string(r) + "</text>\n";
    }
    for (int c = 0; c < cols; ++c) {
        out += "<text x=\"" + std::to_string(kMarginL + c * cell + cell / 2) + "\" y=\"" +
               std::to_string(kMarginT + rows * cell + 14) + "\" text-anchor=\"middle\">H" +
               std::to_string(c) + "</text>\n";
    }
    out += "</svg>\n";
    return out;
}

std::string svg_panel_row(const std::vector<std::string>& panels) {
    // Parse width/height from each panel and place side by side.
    std::string out = "<!-- schema: factlab.chart.v1 -->\n";
    int total_w = 0, max_h = 0;
    std::vector<std::pair<int, int>> dims;
    for (const auto& p : panels) {
        int w = kW, h = kH;
        const auto wp = p.find("width=\"");
        if (wp != std::string::npos) w = std::atoi(p.c_str() + wp + 7);
        const auto hp = p.find("height=\"");
        if (hp != std::string::npos) h = std::atoi(p.c_str() + hp + 8);
        dims.push_back({w, h});
        total_w += w;
        max_h = std::max(max_h, h);
    }
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(total_w) +
           "\" height=\"" + std::to_string(max_h) + "\">\n";
    int x = 0;
    for (size_t i = 0; i < panels.size(); ++i) {
        std::string body = panels[i];
        // strip the leading comment and outer svg element
        const auto open = body.find("<svg");
        const auto open_end = body.find('>', open);
        const auto close = body.rfind("</svg>");
        body = body.substr(open_end + 1, close - open_end - 1);
        out += "<g transform=\"translate(" + std::to_string(x) + ",0)\">\n" + body + "</g>\n";
        x += dims[i].first;
    }
    out += "</svg>\n";
    return out;
}

} // namespace factlab
