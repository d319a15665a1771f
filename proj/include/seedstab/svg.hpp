#pragma once

#include <optional>
#include <string>
#include <vector>

namespace seedstab::svg {

// Small deterministic SVG chart emitter: fixed canvas, %.6g number
// formatting, no timestamps, so identical inputs give identical bytes.

struct Series {
    std::string label;
    std::vector<double> xs;
    std::vector<double> ys;
    std::string color;
    bool draw_points = true;
};

struct ScatterPoint {
    double x = 0.0;
    double y = 0.0;
    std::string color;
};

std::string format_num(double v);

// Polyline chart with axes, ticks and a legend.
std::string line_chart(const std::string& title, const std::string& x_label,
                       const std::string& y_label,
                       const std::vector<Series>& series);

std::string scatter_chart(const std::string& title, const std::string& x_label,
                          const std::string& y_label,
                          const std::vector<ScatterPoint>& points,
                          const std::vector<std::pair<std::string, std::string>>&
                              legend = {});

// Row-major matrix heatmap with a monochrome ramp and cell values.
std::string heatmap(const std::string& title, const std::vector<double>& values,
                    int rows, int cols, const std::string& x_label,
                    const std::string& y_label);

// Maps v in [0,1] to a blue->red ramp; used for relative-depth coloring.
std::string ramp_color(double v);

void write_file(const std::string& path, const std::string& content);

}  // namespace seedstab::svg
