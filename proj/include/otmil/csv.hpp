#pragma once
// CSV plumbing shared by the CLI and the exporters. All floating-point
// exports use %.17g so a round trip through text is lossless; p-values are
// the one documented exception (%.4g).

#include <otmil/common.hpp>

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace otmil {

inline std::string format_g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline std::string format_g4(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.4g", x);
  return buf;
}

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

// Strict double parse: the whole token must be consumed.
inline bool parse_double(const std::string& token, double& out) {
  const std::string t = trim(token);
  if (t.empty()) return false;
  errno = 0;
  char* end = nullptr;
  out = std::strtod(t.c_str(), &end);
  return end == t.c_str() + t.size() && errno != ERANGE;
}

inline bool parse_long(const std::string& token, long long& out) {
  const std::string t = trim(token);
  if (t.empty()) return false;
  errno = 0;
  char* end = nullptr;
  out = std::strtoll(t.c_str(), &end, 10);
  return end == t.c_str() + t.size() && errno != ERANGE;
}

// Parses a rectangular numeric CSV. Errors name the bad cell (1-based).
inline Matrix read_numeric_csv(std::istream& in, const std::string& origin) {
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<double> row;
    const auto cells = split(line, ',');
    for (std::size_t j = 0; j < cells.size(); ++j) {
      double v = 0.0;
      if (!parse_double(cells[j], v)) {
        throw ConfigError(origin + ": bad numeric cell at row " +
                              std::to_string(lineno) + ", column " +
                              std::to_string(j + 1) + ": '" + trim(cells[j]) + "'",
                          lineno);
      }
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ConfigError(origin + ": row " + std::to_string(lineno) + " has " +
                            std::to_string(row.size()) + " columns, expected " +
                            std::to_string(rows.front().size()),
                        lineno);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError(origin + ": empty matrix");
  Matrix m(static_cast<int>(rows.size()), static_cast<int>(rows.front().size()));
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) m(i, j) = rows[i][j];
  return m;
}

inline Matrix read_numeric_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoError::Code::Missing, "cannot open " + path);
  return read_numeric_csv(in, path);
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(IoError::Code::Missing, "cannot write " + path);
  out << content;
  if (!out) throw IoError(IoError::Code::Malformed, "short write to " + path);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoError::Code::Missing, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace otmil
