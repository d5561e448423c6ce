#include "degmon/error.hpp"

namespace degmon {

std::string_view error_class_name(ErrorClass cls) {
  switch (cls) {
    case ErrorClass::kConfig: return "config";
    case ErrorClass::kValidation: return "validation";
    case ErrorClass::kIo: return "io";
    case ErrorClass::kFormat: return "format";
    case ErrorClass::kState: return "state";
    case ErrorClass::kNumerical: return "numerical";
  }
  return "unknown";
}

int exit_code_for(ErrorClass cls) {
  switch (cls) {
    case ErrorClass::kConfig:
    case ErrorClass::kValidation:
    case ErrorClass::kState:
      return 2;
    case ErrorClass::kIo:
    case ErrorClass::kFormat:
      return 3;
    case ErrorClass::kNumerical:
      return 4;
  }
  return 1;
}

}  // namespace degmon
