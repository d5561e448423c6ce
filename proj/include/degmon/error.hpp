#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace degmon {

enum class ErrorClass { kConfig, kValidation, kIo, kFormat, kState, kNumerical };

std::string_view error_class_name(ErrorClass cls);

/// Process exit code used by the CLI for each error class
/// (2 config/validation/state, 3 I/O or format, 4 numerical).
int exit_code_for(ErrorClass cls);

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& message)
      : std::runtime_error(message), cls_(cls) {}

  ErrorClass error_class() const { return cls_; }

 private:
  ErrorClass cls_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error(ErrorClass::kConfig, m) {}
};
struct ValidationError : Error {
  explicit ValidationError(const std::string& m) : Error(ErrorClass::kValidation, m) {}
};
struct IoError : Error {
  explicit IoError(const std::string& m) : Error(ErrorClass::kIo, m) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& m) : Error(ErrorClass::kFormat, m) {}
};
struct StateError : Error {
  explicit StateError(const std::string& m) : Error(ErrorClass::kState, m) {}
};
struct NumericalError : Error {
  explicit NumericalError(const std::string& m) : Error(ErrorClass::kNumerical, m) {}
};

}  // namespace degmon
