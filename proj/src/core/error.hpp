#pragma once

#include <stdexcept>
#include <string>

namespace hgd {

// Error categories map 1:1 onto process exit codes (see tools/).
enum class ErrorKind { Config = 2, Numeric = 3, Io = 4 };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(prefix(kind) + msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

private:
  static std::string prefix(ErrorKind k) {
    switch (k) {
      case ErrorKind::Config: return "configuration: ";
      case ErrorKind::Numeric: return "numeric: ";
      case ErrorKind::Io: return "io: ";
    }
    return "";
  }
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(ErrorKind::Config, msg) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error(ErrorKind::Numeric, msg) {}
};
struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(ErrorKind::Io, msg) {}
};
// Shape mismatches are configuration errors with a dedicated type so tests
// can distinguish them.
struct ShapeError : ConfigError {
  explicit ShapeError(const std::string& msg) : ConfigError("shape: " + msg) {}
};

}  // namespace hgd
