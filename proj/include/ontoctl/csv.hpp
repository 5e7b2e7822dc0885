#pragma once

// Minimal RFC 4180 reader/writer: quoted fields, doubled quotes, embedded
// newlines inside quotes.

#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ontoctl/error.hpp"

namespace ontoctl::csv {

using Row = std::vector<std::string>;

/// Reads one record; nullopt at end of input.
inline std::optional<Row> read_row(std::istream& in, std::size_t& line) {
  Row row;
  std::string field;
  bool quoted = false, any = false, was_quoted = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field += '"';
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    if (c == '"' && field.empty() && !was_quoted) {
      quoted = was_quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      was_quoted = false;
    } else if (c == '\n') {
      ++line;
      if (!field.empty() && field.back() == '\r') field.pop_back();
      row.push_back(std::move(field));
      return row;
    } else {
      field += c;
    }
  }
  if (quoted) throw Error(ErrorKind::SyntaxError, "line " + std::to_string(line) + ": unterminated quote");
  if (!any) return std::nullopt;
  if (!field.empty() && field.back() == '\r') field.pop_back();
  row.push_back(std::move(field));
  return row;
}

inline std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

inline std::string join(const Row& row) {
  std::string out;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) out += ',';
    out += escape(row[i]);
  }
  return out;
}

}  // namespace ontoctl::csv
