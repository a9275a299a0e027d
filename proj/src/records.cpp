// SPDX-License-Identifier: Apache-2.0

#include "records.hpp"

#include <fmt/format.h>

#include <charconv>
#include <cmath>
#include <sstream>

#include "igds/error.hpp"

namespace igds::records {

Fields split(std::string_view line, const char* what, std::size_t lineno) {
  Fields out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    if (i >= line.size()) break;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    const std::string_view tok = line.substr(i, j - i);
    const auto eq = tok.find('=');
    if (eq == std::string_view::npos) {
      fail(ErrorKind::format, fmt::format("{} line {}: expected key=value, got '{}'", what,
                                          lineno, tok));
    }
    out.emplace_back(std::string(tok.substr(0, eq)), std::string(tok.substr(eq + 1)));
    i = j;
  }
  return out;
}

std::uint64_t to_u64(const std::string& v, const char* what, std::size_t lineno) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    fail(ErrorKind::format, fmt::format("{} line {}: bad integer '{}'", what, lineno, v));
  }
  return out;
}

double to_f64(const std::string& v, const char* what, std::size_t lineno) {
  if (v == "inf") return INFINITY;
  if (v == "-inf") return -INFINITY;
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    fail(ErrorKind::format, fmt::format("{} line {}: bad number '{}'", what, lineno, v));
  }
  return out;
}

std::string f64(double v) { return fmt::format("{}", v); }

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

}  // namespace igds::records
