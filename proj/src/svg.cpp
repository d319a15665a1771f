#include "seedstab/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "seedstab/common.hpp"

namespace seedstab::svg {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 420.0;
constexpr double kMarginLeft = 64.0;
constexpr double kMarginRight = 24.0;
constexpr double kMarginTop = 40.0;
constexpr double kMarginBottom = 52.0;

struct Range {
    double lo = 0.0;
    double hi = 1.0;

    void expand(double v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    static Range of(const std::vector<double>& vs) {
        if (vs.empty()) return {0.0, 1.0};
        Range r{vs.front(), vs.front()};
        for (double v : vs) r.expand(v);
        return r;
    }
    void pad() {
        if (hi - lo < 1e-12) {
            hi += 0.5;
            lo -= 0.5;
        } else {
            const double m = 0.05 * (hi - lo);
            hi += m;
            lo -= m;
        }
    }
    double frac(double v) const { return (v - lo) / (hi - lo); }
};

std::string esc(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

double px(const Range& r, double v) {
    return kMarginLeft + r.frac(v) * (kWidth - kMarginLeft - kMarginRight);
}

double py(const Range& r, double v) {
    return kHeight - kMarginBottom -
           r.frac(v) * (kHeight - kMarginTop - kMarginBottom);
}

void open_doc(std::string& out, const std::string& title) {
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + format_num(kWidth) +
           "\" height=\"" + format_num(kHeight) + "\" viewBox=\"0 0 " +
           format_num(kWidth) + " " + format_num(kHeight) + "\">\n";
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out += "<text x=\"" + format_num(kWidth / 2) +
           "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"15\">" +
           esc(title) + "</text>\n";
}

void axes(std::string& out, const Range& xr, const Range& yr,
          const std::string& x_label, const std::string& y_label) {
    const double x0 = kMarginLeft, x1 = kWidth - kMarginRight;
    const double y0 = kHeight - kMarginBottom, y1 = kMarginTop;
    out += "<line x1=\"" + format_num(x0) + "\" y1=\"" + format_num(y0) +
           "\" x2=\"" + format_num(x1) + "\" y2=\"" + format_num(y0) +
           "\" stroke=\"black\"/>\n";
    out += "<line x1=\"" + format_num(x0) + "\" y1=\"" + format_num(y0) +
           "\" x2=\"" + format_num(x0) + "\" y2=\"" + format_num(y1) +
           "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double f = static_cast<double>(i) / 4.0;
        const double xv = xr.lo + f * (xr.hi - xr.lo);
        const double yv = yr.lo + f * (yr.hi - yr.lo);
        const double xp = x0 + f * (x1 - x0);
        const double yp = y0 - f * (y0 - y1);
        out += "<line x1=\"" + format_num(xp) + "\" y1=\"" + format_num(y0) +
               "\" x2=\"" + format_num(xp) + "\" y2=\"" + format_num(y0 + 4) +
               "\" stroke=\"black\"/>\n";
        out += "<text x=\"" + format_num(xp) + "\" y=\"" + format_num(y0 + 18) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
               format_num(xv) + "</text>\n";
        out += "<line x1=\"" + format_num(x0 - 4) + "\" y1=\"" + format_num(yp) +
               "\" x2=\"" + format_num(x0) + "\" y2=\"" + format_num(yp) +
               "\" stroke=\"black\"/>\n";
        out += "<text x=\"" + format_num(x0 - 8) + "\" y=\"" + format_num(yp + 4) +
               "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
               format_num(yv) + "</text>\n";
    }
    out += "<text x=\"" + format_num((x0 + x1) / 2) + "\" y=\"" +
           format_num(kHeight - 14) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" +
           esc(x_label) + "</text>\n";
    out += "<text x=\"16\" y=\"" + format_num((y0 + y1) / 2) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
           "transform=\"rotate(-90 16 " +
           format_num((y0 + y1) / 2) + ")\">" + esc(y_label) + "</text>\n";
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

}  // namespace

std::string format_num(double v) {
    if (v == 0.0) v = 0.0;  // normalize -0
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

std::string line_chart(const std::string& title, const std::string& x_label,
                       const std::string& y_label,
                       const std::vector<Series>& series) {
    Range xr, yr;
    bool first = true;
    for (const auto& s : series) {
        for (size_t i = 0; i < s.xs.size(); ++i) {
            if (first) {
                xr = {s.xs[i], s.xs[i]};
                yr = {s.ys[i], s.ys[i]};
                first = false;
            } else {
                xr.expand(s.xs[i]);
                yr.expand(s.ys[i]);
            }
        }
    }
    xr.pad();
    yr.pad();

    std::string out;
    open_doc(out, title);
    axes(out, xr, yr, x_label, y_label);
    size_t color_idx = 0;
    double legend_y = kMarginTop + 6.0;
    for (const auto& s : series) {
        const std::string color =
            s.color.empty() ? kPalette[color_idx % 8] : s.color;
        ++color_idx;
        std::string pts;
        for (size_t i = 0; i < s.xs.size(); ++i) {
            if (i) pts += " ";
            pts += format_num(px(xr, s.xs[i])) + "," + format_num(py(yr, s.ys[i]));
        }
        out += "<polyline fill=\"none\" stroke=\"" + color +
               "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
        if (s.draw_points) {
            for (size_t i = 0; i < s.xs.size(); ++i) {
                out += "<circle cx=\"" + format_num(px(xr, s.xs[i])) + "\" cy=\"" +
                       format_num(py(yr, s.ys[i])) + "\" r=\"2.5\" fill=\"" + color +
                       "\"/>\n";
            }
        }
        if (!s.label.empty()) {
            out += "<rect x=\"" + format_num(kWidth - kMarginRight - 150) +
                   "\" y=\"" + format_num(legend_y - 8) +
                   "\" width=\"10\" height=\"10\" fill=\"" + color + "\"/>\n";
            out += "<text x=\"" + format_num(kWidth - kMarginRight - 136) +
                   "\" y=\"" + format_num(legend_y + 1) +
                   "\" font-family=\"sans-serif\" font-size=\"11\">" +
                   esc(s.label) + "</text>\n";
            legend_y += 16.0;
        }
    }
    out += "</svg>\n";
    return out;
}

std::string scatter_chart(const std::string& title, const std::string& x_label,
                          const std::string& y_label,
                          const std::vector<ScatterPoint>& points,
                          const std::vector<std::pair<std::string, std::string>>&
                              legend) {
    Range xr, yr;
    bool first = true;
    for (const auto& p : points) {
        if (first) {
            xr = {p.x, p.x};
            yr = {p.y, p.y};
            first = false;
        } else {
            xr.expand(p.x);
            yr.expand(p.y);
        }
    }
    xr.pad();
    yr.pad();

    std::string out;
    open_doc(out, title);
    axes(out, xr, yr, x_label, y_label);
    for (const auto& p : points) {
        out += "<circle cx=\"" + format_num(px(xr, p.x)) + "\" cy=\"" +
               format_num(py(yr, p.y)) + "\" r=\"3\" fill=\"" +
               (p.color.empty() ? "#1f77b4" : p.color) +
               "\" fill-opacity=\"0.75\"/>\n";
    }
    double legend_y = kMarginTop + 6.0;
    for (const auto& [label, color] : legend) {
        out += "<circle cx=\"" + format_num(kWidth - kMarginRight - 144) +
               "\" cy=\"" + format_num(legend_y - 3) + "\" r=\"4\" fill=\"" +
               color + "\"/>\n";
        out += "<text x=\"" + format_num(kWidth - kMarginRight - 134) + "\" y=\"" +
               format_num(legend_y + 1) +
               "\" font-family=\"sans-serif\" font-size=\"11\">" + esc(label) +
               "</text>\n";
        legend_y += 16.0;
    }
    out += "</svg>\n";
    return out;
}

std::string heatmap(const std::string& title, const std::vector<double>& values,
                    int rows, int cols, const std::string& x_label,
                    const std::string& y_label) {
    double lo = 0.0, hi = 1.0;
    if (!values.empty()) {
        lo = *std::min_element(values.begin(), values.end());
        hi = *std::max_element(values.begin(), values.end());
        if (hi - lo < 1e-12) hi = lo + 1.0;
    }
    const double plot_w = kWidth - kMarginLeft - kMarginRight;
    const double plot_h = kHeight - kMarginTop - kMarginBottom;
    const double cw = plot_w / static_cast<double>(cols);
    const double ch = plot_h / static_cast<double>(rows);

    std::string out;
    open_doc(out, title);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            const double v = values[static_cast<size_t>(i) * cols + static_cast<size_t>(j)];
            const double f = (v - lo) / (hi - lo);
            const int shade = static_cast<int>(std::lround(245.0 - 205.0 * f));
            const double x = kMarginLeft + j * cw;
            const double y = kMarginTop + i * ch;
            out += "<rect x=\"" + format_num(x) + "\" y=\"" + format_num(y) +
                   "\" width=\"" + format_num(cw) + "\" height=\"" + format_num(ch) +
                   "\" fill=\"rgb(" + std::to_string(shade) + "," +
                   std::to_string(shade) + ",255)\" stroke=\"white\"/>\n";
            out += "<text x=\"" + format_num(x + cw / 2) + "\" y=\"" +
                   format_num(y + ch / 2 + 4) +
                   "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
                   "font-size=\"10\">" +
                   format_num(v) + "</text>\n";
        }
    }
    for (int j = 0; j < cols; ++j) {
        out += "<text x=\"" + format_num(kMarginLeft + (j + 0.5) * cw) + "\" y=\"" +
               format_num(kHeight - kMarginBottom + 16) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
               std::to_string(j + 1) + "</text>\n";
    }
    for (int i = 0; i < rows; ++i) {
        out += "<text x=\"" + format_num(kMarginLeft - 8) + "\" y=\"" +
               format_num(kMarginTop + (i + 0.5) * ch + 4) +
               "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
               std::to_string(i + 1) + "</text>\n";
    }
    out += "<text x=\"" + format_num(kMarginLeft + plot_w / 2) + "\" y=\"" +
           format_num(kHeight - 14) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" +
           esc(x_label) + "</text>\n";
    out += "<text x=\"16\" y=\"" + format_num(kMarginTop + plot_h / 2) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
           "transform=\"rotate(-90 16 " +
           format_num(kMarginTop + plot_h / 2) + ")\">" + esc(y_label) +
           "</text>\n";
    out += "</svg>\n";
    return out;
}

std::string ramp_color(double v) {
    v = std::clamp(v, 0.0, 1.0);
    const int r = static_cast<int>(std::lround(40.0 + 200.0 * v));
    const int g = static_cast<int>(std::lround(60.0 + 40.0 * (1.0 - std::fabs(v - 0.5) * 2.0)));
    const int b = static_cast<int>(std::lround(40.0 + 200.0 * (1.0 - v)));
    char buf[16];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
    return buf;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("short write: " + path);
}

}  // namespace seedstab::svg
