#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "nowcast/common.hpp"

namespace nowcast {

struct CsvRow {
  int line_no = 0;
  std::vector<std::string> fields;
};

struct CsvTable {
  std::string path;
  std::vector<std::string> header;
  std::vector<CsvRow> rows;
};

namespace detail {
inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(trim(cur));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}
}  // namespace detail

// Plain comma-separated values, no quoting. Blank lines and lines starting
// with '#' are skipped.
inline CsvTable read_csv(const std::filesystem::path& path, bool has_header = true) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path.string());
  CsvTable table;
  table.path = path.string();
  std::string line;
  int line_no = 0;
  bool header_done = !has_header;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto fields = detail::split_fields(line);
    if (!header_done) {
      table.header = fields;
      header_done = true;
    } else {
      table.rows.push_back({line_no, std::move(fields)});
    }
  }
  if (has_header && table.header.empty()) {
    throw DataError("empty file (missing header): " + path.string());
  }
  return table;
}

inline void expect_header(const CsvTable& table, std::initializer_list<const char*> expected) {
  bool ok = table.header.size() == expected.size();
  if (ok) {
    size_t i = 0;
    for (const char* e : expected) ok = ok && table.header[i++] == e;
  }
  if (!ok) {
    std::string want;
    for (const char* e : expected) {
      if (!want.empty()) want += ",";
      want += e;
    }
    std::string got;
    for (const auto& h : table.header) {
      if (!got.empty()) got += ",";
      got += h;
    }
    throw DataError(strf("%s: unexpected header '%s' (expected '%s')", table.path.c_str(),
                         got.c_str(), want.c_str()));
  }
}

inline long parse_long(const std::string& s, const std::string& context) {
  long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw DataError(context + ": invalid integer '" + s + "'");
  }
  return v;
}

inline double parse_double(const std::string& s, const std::string& context) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(context + ": invalid number '" + s + "'");
  }
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path) : out_(path) {
    if (!out_) throw DataError("cannot open file for writing: " + path.string());
  }

  void row(const std::vector<std::string>& fields) {
    for (size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << fields[i];
    }
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

}  // namespace nowcast
