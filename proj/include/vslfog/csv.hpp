#pragma once

// Minimal comma-separated reader/writer for the plain numeric tables used by
// the tools (no quoting; '#' starts a comment line).

#include <charconv>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vslfog/error.hpp"

namespace vslfog::csv {

struct Row {
  std::size_t line = 0;  // 1-based line in the source
  std::vector<std::string> fields;
};

class Table {
public:
  std::string source;
  std::vector<std::string> header;
  std::vector<Row> rows;

  bool has(std::string_view col) const { return index_.count(std::string(col)) > 0; }

  std::size_t column(std::string_view col) const {
    auto it = index_.find(std::string(col));
    if (it == index_.end()) throw ParseError(source + ": missing column '" + std::string(col) + "'");
    return it->second;
  }

  const std::string& text(const Row& r, std::size_t col) const { return r.fields[col]; }

  double number(const Row& r, std::size_t col) const {
    const auto& f = r.fields[col];
    double v = 0.0;
    const auto* end = f.data() + f.size();
    auto [p, ec] = std::from_chars(f.data(), end, v);
    if (ec != std::errc{} || p != end)
      throw ParseError(where(r) + ": '" + f + "' in column '" + header[col] + "' is not a number");
    return v;
  }

  std::string where(const Row& r) const { return source + ":" + std::to_string(r.line); }

  void index() {
    index_.clear();
    for (std::size_t i = 0; i < header.size(); ++i) index_[header[i]] = i;
  }

private:
  std::unordered_map<std::string, std::size_t> index_;
};

inline std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    auto field = line.substr(start, pos == std::string_view::npos ? line.npos : pos - start);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\r')) field.remove_suffix(1);
    while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
    out.emplace_back(field);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline Table parse(std::istream& in, const std::string& source) {
  Table t;
  t.source = source;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    auto fields = split(line);
    if (!have_header) {
      t.header = std::move(fields);
      t.index();
      have_header = true;
      continue;
    }
    if (fields.size() != t.header.size())
      throw ParseError(source + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(t.header.size()) + " fields, found " +
                       std::to_string(fields.size()));
    t.rows.push_back({lineno, std::move(fields)});
  }
  if (!have_header) throw ParseError(source + ": empty file");
  return t;
}

inline Table read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return parse(in, path);
}

/// Shortest text that reads back to the same double.
inline std::string fmt(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace vslfog::csv
