#pragma once

#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace rsa {

/// One row of the shared plot-data schema, so simulated and measured curves
/// can be overlaid:
///   series,step,pass_at_1,pass_at_n,gap,pass_at_1_se,pass_at_n_se,gap_se
struct PlotRow {
  std::string series;
  int step = 0;
  double pass_at_1 = 0.0;
  double pass_at_n = 0.0;
  double gap = 0.0;
  double pass_at_1_se = 0.0;
  double pass_at_n_se = 0.0;
  double gap_se = 0.0;
};

void write_plot_csv(std::ostream& out, std::span<const PlotRow> rows);

/// Shortest round-trip decimal form of a double.
std::string format_double(double value);

}  // namespace rsa
