#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fedprotip/errors.hpp"

// Minimal CSV plumbing shared by the result writers: fixed column order,
// 17-significant-digit floats, newline-terminated UTF-8.
namespace fedprotip::csv {

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string fmt(std::size_t v) { return std::to_string(v); }
inline std::string fmt(long long v) { return std::to_string(v); }

struct Writer {
  std::ofstream os;

  explicit Writer(const std::filesystem::path& path) : os(path) {
    if (!os) throw IoError("csv: cannot open " + path.string() + " for writing");
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i)
      os << (i ? "," : "") << cells[i];
    os << "\n";
  }
};

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline Table read(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("csv: cannot open " + path.string() + " for reading");
  Table t;
  std::string line;
  if (std::getline(is, line)) t.header = split_line(line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    t.rows.push_back(split_line(line));
  }
  return t;
}

inline std::size_t column_index(const Table& t, const std::string& name) {
  for (std::size_t i = 0; i < t.header.size(); ++i)
    if (t.header[i] == name) return i;
  throw IoError("csv: missing column '" + name + "'");
}

}  // namespace fedprotip::csv
