#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "raco/error.hpp"

namespace raco {

enum class ColumnKind { kNumeric, kCategorical, kLabel, kSensitive };

inline const char* to_string(ColumnKind k) {
  switch (k) {
    case ColumnKind::kNumeric: return "numeric";
    case ColumnKind::kCategorical: return "categorical";
    case ColumnKind::kLabel: return "label";
    case ColumnKind::kSensitive: return "sensitive";
  }
  return "?";
}

inline ColumnKind column_kind_from_string(std::string_view s) {
  if (s == "numeric") return ColumnKind::kNumeric;
  if (s == "categorical") return ColumnKind::kCategorical;
  if (s == "label") return ColumnKind::kLabel;
  if (s == "sensitive") return ColumnKind::kSensitive;
  throw ConfigError("unknown column kind '" + std::string(s) + "'");
}

struct ColumnSpec {
  std::string name;
  ColumnKind kind;
};

using TableSchema = std::vector<ColumnSpec>;

/// Parsed tabular data, column-major. Rows with missing values are dropped
/// at load time and counted in `dropped_rows`. The sensitive column is kept
/// as a categorical column.
struct RawTable {
  TableSchema schema;
  std::vector<std::vector<std::string>> columns;  // schema order
  std::size_t dropped_rows = 0;

  std::size_t num_rows() const { return columns.empty() ? 0 : columns[0].size(); }
  std::size_t num_cols() const { return schema.size(); }

  int column_index(std::string_view name) const {
    for (std::size_t i = 0; i < schema.size(); ++i)
      if (schema[i].name == name) return static_cast<int>(i);
    throw DataError("no column named '" + std::string(name) + "'");
  }

  int label_column() const { return only_column(ColumnKind::kLabel, "label"); }

  int sensitive_column() const {
    return only_column(ColumnKind::kSensitive, "sensitive");
  }

  bool has_sensitive_column() const {
    return std::any_of(schema.begin(), schema.end(), [](const ColumnSpec& c) {
      return c.kind == ColumnKind::kSensitive;
    });
  }

  /// Sorted distinct values of a column (deterministic level order).
  std::vector<std::string> distinct_values(int col) const {
    std::vector<std::string> v = columns.at(col);
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
  }

 private:
  int only_column(ColumnKind kind, const char* what) const {
    int found = -1;
    for (std::size_t i = 0; i < schema.size(); ++i) {
      if (schema[i].kind != kind) continue;
      if (found >= 0)
        throw DataError(std::string("multiple ") + what + " columns in schema");
      found = static_cast<int>(i);
    }
    if (found < 0) throw DataError(std::string("schema has no ") + what + " column");
    return found;
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline bool is_missing(std::string_view s) {
  return s.empty() || s == "?" || s == "NA" || s == "na";
}

inline std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(line);
  while (std::getline(ss, cur, delim)) out.emplace_back(trim(cur));
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

}  // namespace detail

/// Loads a delimited file with a mandatory header row. The header must carry
/// exactly the schema's column names (any order). Numeric cells that fail to
/// parse raise DataError naming the file line and column; rows containing a
/// missing marker ("", "?", "NA") are dropped and counted.
inline RawTable load_csv(const std::string& path, const TableSchema& schema,
                         char delimiter = ',') {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path + "' is empty");
  const std::vector<std::string> header = detail::split_line(line, delimiter);

  if (header.size() != schema.size()) {
    throw DataError("'" + path + "': header has " + std::to_string(header.size()) +
                    " columns, schema expects " + std::to_string(schema.size()));
  }
  // Map file column order onto schema order.
  std::vector<int> file_to_schema(header.size(), -1);
  for (std::size_t f = 0; f < header.size(); ++f) {
    for (std::size_t s = 0; s < schema.size(); ++s) {
      if (schema[s].name == header[f]) {
        file_to_schema[f] = static_cast<int>(s);
        break;
      }
    }
    if (file_to_schema[f] < 0)
      throw DataError("'" + path + "': header column '" + header[f] +
                      "' not in schema");
  }

  RawTable table;
  table.schema = schema;
  table.columns.assign(schema.size(), {});

  std::vector<std::string> row(schema.size());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const std::vector<std::string> cells = detail::split_line(line, delimiter);
    if (cells.size() != schema.size()) {
      throw DataError("'" + path + "' line " + std::to_string(line_no) + ": has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(schema.size()));
    }
    bool missing = false;
    for (std::size_t f = 0; f < cells.size(); ++f) {
      if (detail::is_missing(cells[f])) {
        missing = true;
        break;
      }
      row[file_to_schema[f]] = cells[f];
    }
    if (missing) {
      ++table.dropped_rows;
      continue;
    }
    for (std::size_t s = 0; s < schema.size(); ++s) {
      if (schema[s].kind == ColumnKind::kNumeric) {
        double v;
        if (!detail::parse_double(row[s], v)) {
          throw DataError("'" + path + "' line " + std::to_string(line_no) +
                          ", column '" + schema[s].name + "': cannot parse '" +
                          row[s] + "' as numeric");
        }
      }
      table.columns[s].push_back(row[s]);
    }
  }

  const int label = table.label_column();
  if (table.num_rows() > 0 && table.distinct_values(label).size() < 2)
    throw DataError("'" + path + "': label column '" + schema[label].name +
                    "' has fewer than 2 distinct values");
  return table;
}

}  // namespace raco
