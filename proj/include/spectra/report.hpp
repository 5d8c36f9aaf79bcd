#pragma once

// Tabular reports emitted by the CLI. CSV is the primary format:
//
//   # spectra-csv v1 <kind>
//   col_a,col_b,...
//   ...
//
// Floating values use 12 significant digits in the shortest form
// (std::to_chars, so the decimal separator is '.' regardless of locale).
// JSON output mirrors the same rows.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"
#include "spectra/error.hpp"

namespace spectra {

inline constexpr std::string_view kCsvSchemaVersion = "v1";

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) return "0";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 12);
  return std::string(buf, res.ptr);
}

using Cell = std::variant<std::string, std::int64_t, double, bool>;

inline std::string format_cell(const Cell& c) {
  struct Visitor {
    std::string operator()(const std::string& s) const { return s; }
    std::string operator()(std::int64_t i) const { return std::to_string(i); }
    std::string operator()(double d) const { return format_number(d); }
    std::string operator()(bool b) const { return b ? "1" : "0"; }
  };
  return std::visit(Visitor{}, c);
}

struct Report {
  std::string kind;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add(std::vector<Cell> row) {
    if (row.size() != columns.size()) throw InvalidArgument("report row width does not match columns");
    rows.push_back(std::move(row));
  }
};

inline void write_csv(const Report& r, std::ostream& os) {
  os << "# spectra-csv " << kCsvSchemaVersion << ' ' << r.kind << '\n';
  for (std::size_t i = 0; i < r.columns.size(); ++i) os << (i ? "," : "") << r.columns[i];
  os << '\n';
  for (const auto& row : r.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << format_cell(row[i]);
    os << '\n';
  }
}

inline void write_json(const Report& r, std::ostream& os) {
  nlohmann::ordered_json doc;
  doc["schema"] = "spectra-json " + std::string(kCsvSchemaVersion) + " " + r.kind;
  doc["columns"] = r.columns;
  auto rows = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) {
    nlohmann::ordered_json obj;
    for (std::size_t i = 0; i < row.size(); ++i) {
      const Cell& c = row[i];
      if (const auto* d = std::get_if<double>(&c)) {
        // Same digits as the CSV; non-finite values become strings.
        if (std::isfinite(*d))
          obj[r.columns[i]] = nlohmann::ordered_json::parse(format_number(*d));
        else
          obj[r.columns[i]] = format_number(*d);
      } else if (const auto* s = std::get_if<std::string>(&c)) {
        obj[r.columns[i]] = *s;
      } else if (const auto* n = std::get_if<std::int64_t>(&c)) {
        obj[r.columns[i]] = *n;
      } else {
        obj[r.columns[i]] = std::get<bool>(c);
      }
    }
    rows.push_back(std::move(obj));
  }
  doc["rows"] = std::move(rows);
  os << doc.dump(2) << '\n';
}

}  // namespace spectra
