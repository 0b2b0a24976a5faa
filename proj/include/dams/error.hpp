#pragma once

#include <stdexcept>
#include <string>

namespace dams {

// Error categories; exit_code() maps them onto the command-line contract.
enum class ErrorKind {
  usage = 1,
  config = 2,
  data = 3,
  numeric = 4,
  length = 5,
  invalid_batch = 6,
  io = 7,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  int exit_code() const noexcept {
    switch (kind_) {
      case ErrorKind::usage:
      case ErrorKind::config:
      case ErrorKind::io: return 2;
      case ErrorKind::data:
      case ErrorKind::length:
      case ErrorKind::invalid_batch: return 3;
      case ErrorKind::numeric: return 4;
    }
    return 1;
  }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace dams
