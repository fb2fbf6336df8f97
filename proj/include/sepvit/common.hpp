#pragma once

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sepvit {

// Every failure surfaces as an Error with a stable category string; the CLI
// prints "error[<category>]: <message>" and exits nonzero.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}
  const std::string& category() const { return category_; }

 private:
  std::string category_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& m) : Error("shape", m) {}
};
struct LayoutError : Error {
  explicit LayoutError(const std::string& m) : Error("layout", m) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error("config", m) {}
};
struct ParamError : Error {
  explicit ParamError(const std::string& m) : Error("parameter", m) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error("numeric", m) {}
};
struct ContractError : Error {
  explicit ContractError(const std::string& m) : Error("contract", m) {}
};
struct IoError : Error {
  explicit IoError(const std::string& m) : Error("io", m) {}
 protected:
  IoError(const std::string& cat, const std::string& m) : Error(cat, m) {}
};
struct ParseError : Error {
  explicit ParseError(const std::string& m) : Error("parse", m) {}
};

// Checkpoint loading distinguishes these three failure modes.
struct CheckpointVersionError : IoError {
  explicit CheckpointVersionError(const std::string& m) : IoError("checkpoint-version", m) {}
};
struct CheckpointTruncatedError : IoError {
  explicit CheckpointTruncatedError(const std::string& m) : IoError("checkpoint-truncated", m) {}
};
struct CheckpointManifestError : IoError {
  explicit CheckpointManifestError(const std::string& m) : IoError("checkpoint-manifest", m) {}
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

}  // namespace sepvit
