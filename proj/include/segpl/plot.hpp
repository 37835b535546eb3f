#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace segpl {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;  // non-finite values leave a gap
};

struct PlotLabels {
  std::string title;
  std::string x_label;
  std::string y_label;
};

/// Static SVG line chart with linear axes and a legend.
std::string render_line_plot(const PlotLabels& labels, const std::vector<Series>& series);
void write_line_plot(const std::filesystem::path& path, const PlotLabels& labels, const std::vector<Series>& series);

}  // namespace segpl
