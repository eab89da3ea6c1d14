#include "ebdesign/csv.hpp"

#include <charconv>
#include <istream>
#include <sstream>

#include "ebdesign/error.hpp"

namespace ebdesign::csv {
namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(trim(std::string_view(line).substr(start)));
      break;
    }
    out.push_back(trim(std::string_view(line).substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

}  // namespace

Table Table::read(std::istream& is) {
  Table t;
  std::string line;
  bool have_header = false;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split(line);
    if (!have_header) {
      t.header_ = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != t.header_.size()) {
      throw Error(ErrorKind::schema, "csv line " + std::to_string(line_no) + " has " +
                                         std::to_string(fields.size()) + " fields, expected " +
                                         std::to_string(t.header_.size()));
    }
    t.rows_.push_back(std::move(fields));
  }
  if (!have_header) throw Error(ErrorKind::schema, "csv input is empty");
  return t;
}

bool Table::has(std::string_view column) const {
  for (const auto& h : header_)
    if (h == column) return true;
  return false;
}

void Table::require(const std::vector<std::string>& columns) const {
  std::string missing;
  for (const auto& c : columns) {
    if (!has(c)) {
      if (!missing.empty()) missing += ", ";
      missing += c;
    }
  }
  if (!missing.empty()) throw Error(ErrorKind::schema, "missing columns: " + missing);
}

std::size_t Table::column(std::string_view name) const {
  for (std::size_t i = 0; i < header_.size(); ++i)
    if (header_[i] == name) return i;
  throw Error(ErrorKind::schema, "missing columns: " + std::string(name));
}

double Table::number(std::size_t row, std::size_t col) const {
  const std::string& s = rows_[row][col];
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorKind::schema, "column '" + header_[col] + "' row " + std::to_string(row + 1) +
                                       ": not a number: '" + s + "'");
  }
  return v;
}

long long Table::integer(std::size_t row, std::size_t col) const {
  const std::string& s = rows_[row][col];
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorKind::schema, "column '" + header_[col] + "' row " + std::to_string(row + 1) +
                                       ": not an integer: '" + s + "'");
  }
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace ebdesign::csv
