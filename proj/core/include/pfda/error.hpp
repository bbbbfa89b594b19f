#pragma once

#include <stdexcept>
#include <string>

namespace pfda {

enum class ErrorKind {
  Bounds,       // index / crop box outside the grid
  Shape,        // tensor shape mismatch
  Config,       // invalid configuration value
  Io,           // file read/write failure
  Format,       // malformed container payload or header
  Invariant,    // domain type invariant violated (non-finite, spacing <= 0, ...)
  Numeric,      // non-finite value produced at runtime
  Undefined,    // estimator/metric undefined for the given input
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace pfda
