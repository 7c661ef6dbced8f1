#pragma once

#include <stdexcept>
#include <string>

namespace cof {

// Root of the library's exception hierarchy. what() is a single line so the
// CLI can print it verbatim as a machine-parsable error.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& msg)
      : std::runtime_error(kind + ": " + msg), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class InvalidInput : public Error {
 public:
  explicit InvalidInput(const std::string& msg) : Error("invalid-input", msg) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error("io-error", msg) {}
};

class IntegrityError : public Error {
 public:
  explicit IntegrityError(const std::string& msg) : Error("integrity-error", msg) {}
};

class ShapeMismatch : public Error {
 public:
  explicit ShapeMismatch(const std::string& msg) : Error("shape-mismatch", msg) {}
};

class InternalError : public Error {
 public:
  explicit InternalError(const std::string& msg) : Error("internal-error", msg) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error("numeric-error", msg) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidInput(msg);
}

}  // namespace cof
