#pragma once

// CSV helpers. Numeric fields are written with %.17g so outputs round-trip
// exactly and identical runs produce byte-identical files.

#include <fstream>
#include <sstream>

#include "cfx/common.hpp"

namespace cfx {

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : f_(path) {
    if (!f_) throw std::runtime_error("CsvWriter: cannot open " + path);
  }

  void header(const std::vector<std::string>& names) {
    for (size_t i = 0; i < names.size(); ++i) {
      if (i) f_ << ',';
      f_ << names[i];
    }
    f_ << '\n';
  }

  void field(double v) {
    sep();
    f_ << fmt_g17(v);
  }
  void field(int v) {
    sep();
    f_ << v;
  }
  void field(const std::string& s) {
    sep();
    f_ << s;
  }
  void field(const char* s) { field(std::string(s)); }

  void end_row() {
    f_ << '\n';
    first_ = true;
  }

  void row(const Vec& values) {
    for (double v : values) field(v);
    end_row();
  }

 private:
  void sep() {
    if (!first_) f_ << ',';
    first_ = false;
  }
  std::ofstream f_;
  bool first_ = true;
};

// matrix as CSV with columns <prefix>0..<prefix>{cols-1}
inline void write_matrix_csv(const std::string& path, const Matrix& m,
                             const std::string& prefix) {
  CsvWriter csv(path);
  std::vector<std::string> names;
  for (int c = 0; c < m.cols; ++c) names.push_back(prefix + std::to_string(c));
  csv.header(names);
  for (int r = 0; r < m.rows; ++r) csv.row(m.row(r));
}

inline Matrix read_matrix_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_matrix_csv: cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("read_matrix_csv: empty file " + path);
  int cols = 1;
  for (char ch : line)
    if (ch == ',') ++cols;
  std::vector<double> values;
  int rows = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    int got = 0;
    while (std::getline(ss, cell, ',')) {
      values.push_back(std::stod(cell));
      ++got;
    }
    if (got != cols) throw std::runtime_error("read_matrix_csv: ragged row in " + path);
    ++rows;
  }
  Matrix m(rows, cols);
  m.data = std::move(values);
  return m;
}

}  // namespace cfx
