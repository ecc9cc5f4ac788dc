#pragma once

#include <Eigen/Core>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gpfuse/errors.hpp"

namespace gpfuse {

/// Tabular data exchanged through files: header "x0,...,x{p-1},y", UTF-8,
/// '.' decimal separator.
struct CsvData {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

inline double parse_double(const std::string& s, const std::string& where) {
  double value = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  while (begin != end && (*begin == ' ' || *begin == '\t')) ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{}) {
    throw std::runtime_error("CSV parse error at " + where + ": '" + s + "'");
  }
  return value;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline CsvData read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open CSV file: " + path);
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("empty CSV file: " + path);
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_csv_line(line);
  Eigen::Index p = -1;
  for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(header.size()); ++c) {
    if (header[c] == "y") {
      p = c;
      break;
    }
  }
  if (p <= 0) {
    throw std::runtime_error("CSV header must be x0,...,x{p-1},y in " + path);
  }
  for (Eigen::Index c = 0; c < p; ++c) {
    if (header[c] != "x" + std::to_string(c)) {
      throw std::runtime_error("unexpected CSV column '" + header[c] +
                               "' in " + path);
    }
  }
  std::vector<std::vector<double>> rows;
  Eigen::Index line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = detail::split_csv_line(line);
    if (static_cast<Eigen::Index>(fields.size()) != p + 1) {
      throw std::runtime_error("CSV row " + std::to_string(line_no) + " in " +
                               path + " has " + std::to_string(fields.size()) +
                               " fields, expected " + std::to_string(p + 1));
    }
    std::vector<double> row(p + 1);
    for (Eigen::Index c = 0; c <= p; ++c) {
      row[c] = detail::parse_double(
          fields[c], path + ":" + std::to_string(line_no));
    }
    rows.push_back(std::move(row));
  }
  CsvData data;
  data.X.resize(static_cast<Eigen::Index>(rows.size()), p);
  data.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (Eigen::Index i = 0; i < data.X.rows(); ++i) {
    for (Eigen::Index c = 0; c < p; ++c) data.X(i, c) = rows[i][c];
    data.y[i] = rows[i][p];
  }
  return data;
}

inline void write_csv(const std::string& path, const Eigen::MatrixXd& X,
                      const Eigen::VectorXd& y) {
  if (X.rows() != y.size()) {
    throw ShapeError("write_csv: X and y row counts differ");
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write CSV file: " + path);
  for (Eigen::Index c = 0; c < X.cols(); ++c) out << "x" << c << ",";
  out << "y\n";
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
      out << detail::format_double(X(i, c)) << ",";
    }
    out << detail::format_double(y[i]) << "\n";
  }
  if (!out) throw std::runtime_error("write failed for CSV file: " + path);
}

}  // namespace gpfuse
