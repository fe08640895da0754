#pragma once

#include <stdexcept>
#include <string>

namespace tth {

enum class ErrorKind {
  Dimension,
  Degenerate,
  Numeric,
  Config,
  Vocabulary,
  Keyword,
  Format,
  Io,
  Spec,
  Id,
  Training,
  NonConvergence,
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void raise(ErrorKind kind, const std::string& message);

// Process exit code for the CLI: 0 is success, every class below is distinct.
int exit_code_for(ErrorKind kind) noexcept;

}  // namespace tth
