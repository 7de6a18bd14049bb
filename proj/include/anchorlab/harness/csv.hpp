// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace anchorlab {

/// RFC 4180 CSV: CRLF line ends, fields quoted when they contain a comma,
/// quote, CR or LF, with embedded quotes doubled.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);
  void row(const std::vector<std::string>& fields);
  const std::string& str() const noexcept { return out_; }

  static std::string quote(std::string_view field);

 private:
  std::size_t width_;
  std::string out_;
};

/// Shortest round-trip-stable rendering ("%.12g"); "nan"/"inf" spelled out.
std::string csv_number(double v);

/// Parses RFC 4180 text into rows of fields.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

}  // namespace anchorlab
