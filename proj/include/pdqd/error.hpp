#pragma once

#include <stdexcept>
#include <string>

namespace pdqd {

enum class ErrorKind {
    validation,   // bad input values or configuration
    precondition, // inputs valid but the operation is undefined for them
    fit,          // numerical fit or assignment failed to converge
    parse,        // malformed file content
    io,           // filesystem failures
};

/// Exception carrying an error kind and the pipeline stage that raised it.
class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, std::string stage, const std::string& message)
        : std::runtime_error(stage + ": " + message), kind_(kind), stage_(std::move(stage)) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& stage() const noexcept { return stage_; }

  private:
    ErrorKind kind_;
    std::string stage_;
};

/// Process exit status for an error kind: 1 usage/validation, 2 precondition, 3 fit.
inline int exit_code(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::precondition:
        return 2;
    case ErrorKind::fit:
        return 3;
    default:
        return 1;
    }
}

} // namespace pdqd
