#pragma once
// Static SVG line plots.

#include <string>
#include <vector>

namespace semivit {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

std::string svg_line_plot(const std::string& title, const std::string& xlabel,
                          const std::string& ylabel, const std::vector<Series>& series);

// Accuracy vs epoch, clean fraction vs step and mean lambda vs step from one
// metrics stream. Returns the written file paths. Plots without data are skipped.
std::vector<std::string> plot_metrics(const std::string& metrics_path, const std::string& out_dir);

}  // namespace semivit
