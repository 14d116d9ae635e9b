#pragma once

#include <stdexcept>
#include <string>

namespace mrl {

// Coarse error classification so callers (and tests) can react to the cause
// without parsing messages.
enum class ErrorKind {
  ShapeMismatch,
  InvalidArgument,
  NonFiniteInput,
  MissingGrad,
  BadMagic,
  BadVersion,
  Truncated,
  Corrupt,
  Io,
  Config,
  SingleClass,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace mrl
