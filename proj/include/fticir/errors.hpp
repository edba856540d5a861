#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fticir {

enum class ErrorKind {
    input,
    shape,
    config,
    lookup,
    data,
    parse,
    io,
    precondition,
};

std::string_view to_string(ErrorKind kind);

// All library failures are reported through this type; `kind` drives the CLI
// exit line and the HTTP status mapping.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
    if (!condition) {
        throw Error(kind, message);
    }
}

}  // namespace fticir
