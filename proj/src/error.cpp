#include "tthlab/error.hpp"

namespace tth {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Dimension: return "dimension error";
    case ErrorKind::Degenerate: return "degenerate-input error";
    case ErrorKind::Numeric: return "numeric error";
    case ErrorKind::Config: return "config error";
    case ErrorKind::Vocabulary: return "vocabulary error";
    case ErrorKind::Keyword: return "keyword error";
    case ErrorKind::Format: return "format error";
    case ErrorKind::Io: return "I/O error";
    case ErrorKind::Spec: return "spec error";
    case ErrorKind::Id: return "id error";
    case ErrorKind::Training: return "training error";
    case ErrorKind::NonConvergence: return "non-convergence";
  }
  return "error";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

void raise(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::Vocabulary:
    case ErrorKind::Keyword:
    case ErrorKind::Spec:
    case ErrorKind::Id:
      return 2;
    case ErrorKind::Io:
    case ErrorKind::Format:
      return 3;
    case ErrorKind::Dimension:
    case ErrorKind::Degenerate:
    case ErrorKind::Numeric:
    case ErrorKind::Training:
      return 4;
    case ErrorKind::NonConvergence:
      return 5;
  }
  return 1;
}

}  // namespace tth
