#include "dosepred/error.hpp"

namespace dosepred {

void fail_validation(const std::string& what) {
  throw Error(ErrorKind::validation, what);
}

void fail_numeric(const std::string& what) {
  throw Error(ErrorKind::numeric, what);
}

void fail_io(const std::string& what) { throw Error(ErrorKind::io, what); }

int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::validation:
      return 2;
    case ErrorKind::numeric:
      return 3;
    case ErrorKind::io:
      return 4;
  }
  return 1;
}

}  // namespace dosepred
