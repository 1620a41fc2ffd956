#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dto {

/// Failure categories. The CLI reports them as `error[<category>]: <message>`
/// and maps each to a distinct exit code.
enum class ErrorKind {
  dimension,
  numeric,
  tape,
  data,
  config,
  io,
  checkpoint_magic,
  checkpoint_truncated,
  checkpoint_dimension,
  architecture,
};

std::string_view to_string(ErrorKind kind);
int exit_code(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace dto
