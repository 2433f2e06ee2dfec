#pragma once

#include <stdexcept>
#include <string>

namespace octpad {

// Broad failure classes. The C API maps each one to a status code and the
// CLI maps them to exit codes.
enum class ErrorKind {
  InvalidArgument,
  Io,
  Format,
  Data,
  Numeric,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace octpad
