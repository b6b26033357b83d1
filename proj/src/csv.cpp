#include "pdeformer/csv.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "pdeformer/errors.hpp"

namespace pdeformer {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw IOError("cannot write '" + path + "'");
  return out;
}

void write_header(std::ofstream& out, const std::vector<std::string>& header) {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) out << ',';
    out << header[i];
  }
  out << '\n';
}

}  // namespace

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  auto out = open_out(path);
  write_header(out, header);
  for (const auto& row : rows) {
    if (row.size() != header.size()) {
      throw ShapeError("csv row width " + std::to_string(row.size()) +
                       " does not match header width " + std::to_string(header.size()));
    }
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      out << format_double(row[i]);
    }
    out << '\n';
  }
  if (!out) throw IOError("short write to '" + path + "'");
}

void write_csv_labeled(const std::string& path, const std::vector<std::string>& header,
                       const std::vector<std::pair<std::string, std::vector<double>>>& rows) {
  auto out = open_out(path);
  write_header(out, header);
  for (const auto& [label, row] : rows) {
    if (row.size() + 1 != header.size()) {
      throw ShapeError("csv row width " + std::to_string(row.size() + 1) +
                       " does not match header width " + std::to_string(header.size()));
    }
    out << label;
    for (double v : row) out << ',' << format_double(v);
    out << '\n';
  }
  if (!out) throw IOError("short write to '" + path + "'");
}

void write_pgm(const std::string& path, const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("write_pgm expects a 2-D tensor");
  const double lo = *std::min_element(m.data().begin(), m.data().end());
  const double hi = *std::max_element(m.data().begin(), m.data().end());
  auto out = open_out(path, std::ios::binary);
  out << "P5\n" << m.cols() << ' ' << m.rows() << "\n255\n";
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double x = hi > lo ? (m[i] - lo) / (hi - lo) : 0.5;
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(x * 255.0))));
  }
  if (!out) throw IOError("short write to '" + path + "'");
}

}  // namespace pdeformer
