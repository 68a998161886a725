#pragma once

#include <stdexcept>
#include <string>

namespace dosepred {

/// Failure category. The command line tool maps these onto exit codes.
enum class ErrorKind {
  validation,  ///< bad input, configuration or geometry (exit 2)
  numeric,     ///< non-finite values during computation (exit 3)
  io,          ///< file system and format failures (exit 4)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail_validation(const std::string& what);
[[noreturn]] void fail_numeric(const std::string& what);
[[noreturn]] void fail_io(const std::string& what);

int exit_code(ErrorKind kind) noexcept;

}  // namespace dosepred
