// SPDX-License-Identifier: Apache-2.0
//
// Helpers for the line-delimited key=value text formats.

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace igds::records {

using Fields = std::vector<std::pair<std::string, std::string>>;

// Splits "k1=v1 k2=v2" on whitespace. Throws a format error naming `what`
// and the line number on tokens without '='.
Fields split(std::string_view line, const char* what, std::size_t lineno);

std::uint64_t to_u64(const std::string& v, const char* what, std::size_t lineno);
double to_f64(const std::string& v, const char* what, std::size_t lineno);

// Shortest representation that parses back to the same double.
std::string f64(double v);

std::vector<std::string> lines(const std::string& text);

}  // namespace igds::records
