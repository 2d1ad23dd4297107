#pragma once

#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

namespace mfh {

inline std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline void write_csv_row(std::ostream& out, const std::vector<double>& row) {
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) out << ',';
    out << fmt17(row[i]);
  }
  out << '\n';
}

inline void write_csv_header(std::ostream& out, const std::vector<std::string>& names) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i) out << ',';
    out << names[i];
  }
  out << '\n';
}

}  // namespace mfh
