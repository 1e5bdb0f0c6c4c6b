#pragma once

#include <stdexcept>
#include <string>

namespace ldistill {

// Every failure raised by the library derives from Error. The kind drives the
// status code reported through the C API and the CLI exit code.
enum class ErrorKind {
  InvalidArgument,
  Shape,
  Config,
  Io,
  Mismatch,
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

}  // namespace ldistill
