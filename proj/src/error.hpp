#pragma once

#include <stdexcept>
#include <string>

namespace vlmlight {

enum class ErrorKind {
  InvalidArgument,
  Parse,
  Config,
  Io,
  Backend,
  Numeric,
  Internal,
};

// Single exception type for the core library. The C layer maps `kind` onto
// its error codes, so new failure categories go in ErrorKind, not new types.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace vlmlight
