// SPDX-License-Identifier: Apache-2.0
//
// Error type shared by every igds module. Each failure carries a kind so the
// C API can map it onto a stable error code.

#pragma once

#include <stdexcept>
#include <string>

namespace igds {

enum class ErrorKind {
  dimension,
  parameter,
  index,
  input,
  length,
  configuration,
  evaluation,
  dependency,
  staleness,
  comparison,
  io,
  format,
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& what);

}  // namespace igds
