#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "iwgae/errors.hpp"

namespace iwgae::csv {

// Shortest round-trip-exact decimal representation of a double. Output is a
// pure function of the value, which the byte-identical-output guarantee
// relies on.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  double back = 0.0;
  std::from_chars(buf, buf + std::string::traits_type::length(buf), back);
  if (back == v) {
    for (int prec = 1; prec <= 16; ++prec) {
      char shorter[40];
      std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
      double b2 = 0.0;
      std::from_chars(shorter, shorter + std::string::traits_type::length(shorter), b2);
      if (b2 == v) return shorter;
    }
  }
  return buf;
}

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

struct Table {
  std::string path;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<long> row_lines;  // 1-based source line per row

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }
};

inline Table read_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError(path + ": cannot open file");
  Table t;
  t.path = path;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (t.header.empty()) {
      t.header = split_line(line);
      continue;
    }
    std::vector<std::string> cells = split_line(line);
    if (cells.size() != t.header.size())
      throw SchemaError(path + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(t.header.size()) + " columns, found " +
                        std::to_string(cells.size()));
    t.rows.push_back(std::move(cells));
    t.row_lines.push_back(line_no);
  }
  if (t.header.empty()) throw SchemaError(path + ": missing header line");
  return t;
}

inline double parse_double(const Table& t, std::size_t row, int col) {
  const std::string& s = t.rows[row][col];
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw SchemaError(t.path + ":" + std::to_string(t.row_lines[row]) +
                      ": bad number '" + s + "' in column '" + t.header[col] + "'");
  return v;
}

inline long parse_long(const Table& t, std::size_t row, int col) {
  const std::string& s = t.rows[row][col];
  long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw SchemaError(t.path + ":" + std::to_string(t.row_lines[row]) +
                      ": bad integer '" + s + "' in column '" + t.header[col] + "'");
  return v;
}

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path) {
    if (!out_) throw PipelineError(path + ": cannot open for writing");
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

}  // namespace iwgae::csv
