#pragma once

#include <string>
#include <vector>

#include "adt/image.hpp"

namespace adt::plot {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Renders a line chart (one polyline per series) to a PPM image and writes
/// a JSON sidecar describing the plotted series for machine consumption.
void render_lines(const std::string& ppm_path, const std::string& sidecar_path,
                  const std::vector<Series>& series, const std::string& x_label,
                  const std::string& y_label);

struct Bar {
  double x = 0;  // numeric label (e.g. attack probability)
  double y = 0;
};

/// Bar chart with bars ordered by ascending x.
void render_bars(const std::string& ppm_path, const std::string& sidecar_path,
                 std::vector<Bar> bars, const std::string& x_label, const std::string& y_label);

}  // namespace adt::plot
