#include "rsa/plotdata.hpp"

#include <charconv>
#include <cmath>

namespace rsa {

std::string format_double(double value) {
  if (value == 0.0) return "0";
  char buf[64];
  const auto result = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, result.ptr);
}

void write_plot_csv(std::ostream& out, std::span<const PlotRow> rows) {
  out << "series,step,pass_at_1,pass_at_n,gap,pass_at_1_se,pass_at_n_se,gap_se\n";
  for (const auto& r : rows) {
    out << r.series << ',' << r.step << ',' << format_double(r.pass_at_1) << ',' << format_double(r.pass_at_n) << ','
        << format_double(r.gap) << ',' << format_double(r.pass_at_1_se) << ',' << format_double(r.pass_at_n_se)
        << ',' << format_double(r.gap_se) << '\n';
  }
}

}  // namespace rsa
