#pragma once

// Minimal header-keyed CSV tables. Fields never contain commas or quotes in
// the formats this project reads and writes.

#include <cstddef>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace ebdesign::csv {

class Table {
 public:
  static Table read(std::istream& is);

  const std::vector<std::string>& header() const { return header_; }
  std::size_t rows() const { return rows_.size(); }

  // Throws a schema error naming every missing column.
  void require(const std::vector<std::string>& columns) const;
  bool has(std::string_view column) const;
  std::size_t column(std::string_view name) const;

  const std::string& cell(std::size_t row, std::size_t col) const { return rows_[row][col]; }
  double number(std::size_t row, std::size_t col) const;
  long long integer(std::size_t row, std::size_t col) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

// Shortest round-trip representation; identical inputs give identical bytes.
std::string format_double(double v);

}  // namespace ebdesign::csv
