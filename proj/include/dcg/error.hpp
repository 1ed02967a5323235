#pragma once

#include <stdexcept>
#include <string>

namespace dcg {

/// Failure categories. The CLI maps each one onto a distinct exit code.
enum class ErrorKind {
  kValidation,
  kParse,
  kShape,
  kConfig,
  kIo,
  kMissingArtifact,
  kLeakage,
  kContract,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& w) : Error(ErrorKind::kValidation, w) {}
};
struct ParseError : Error {
  explicit ParseError(const std::string& w) : Error(ErrorKind::kParse, w) {}
};
struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error(ErrorKind::kShape, w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::kConfig, w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorKind::kIo, w) {}
};
struct MissingArtifactError : Error {
  explicit MissingArtifactError(const std::string& w) : Error(ErrorKind::kMissingArtifact, w) {}
};
struct LeakageError : Error {
  explicit LeakageError(const std::string& w) : Error(ErrorKind::kLeakage, w) {}
};
/// Raised when a frozen model is handed to code that requires it frozen, or similar misuse.
struct ContractError : Error {
  explicit ContractError(const std::string& w) : Error(ErrorKind::kContract, w) {}
};

}  // namespace dcg
