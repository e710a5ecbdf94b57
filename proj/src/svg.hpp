#pragma once

// Minimal deterministic SVG charts for the report figures.

#include <string>
#include <vector>

namespace voxsynth::svg {

struct BoxSeries {
  std::string name;
  std::string color;
  std::vector<std::vector<double>> groups;  // one sample per group
};

/// Side-by-side boxplots (median, quartiles, 1.5 IQR whiskers) per group.
std::string boxplot(const std::string& title, const std::string& y_label, const std::vector<std::string>& groups,
                    const std::vector<BoxSeries>& series);

struct Point {
  double x = 0.0;
  double y = 0.0;
  std::string label;
};

/// Scatter with an identity reference line when `diagonal` is set.
std::string scatter(const std::string& title, const std::string& x_label, const std::string& y_label,
                    const std::vector<Point>& points, bool diagonal);

/// Polyline through (x, y) with optional symmetric error bars.
std::string line(const std::string& title, const std::string& x_label, const std::string& y_label,
                 const std::vector<double>& x, const std::vector<double>& y, const std::vector<double>& err);

}  // namespace voxsynth::svg
