#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ldaprune {

enum class ErrorKind {
  Dimension,      // tensor/matrix extents disagree
  Config,         // layer or run configuration cannot produce a valid result
  InvalidArgument,
  Io,
  BadMagic,
  Truncated,
  ShapeChain,     // adjacent layer shapes do not chain
  Format,         // malformed file content other than magic/truncation
  Numeric,        // NaN, non-PD matrix, diverged loss
  Convergence,
};

std::string_view to_string(ErrorKind kind);

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

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace ldaprune
