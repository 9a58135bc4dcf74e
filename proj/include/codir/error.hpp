#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace codir {

// Coarse failure categories. The CLI maps each one to a distinct exit code
// and prints the category name so scripts can branch on it.
enum class ErrorKind {
    Dimension,
    Parameter,
    DegenerateVector,
    Input,
    State,
    Sampling,
    Bounds,
    Numeric,
    Config,
    Io,
    Format,
};

std::string_view to_string(ErrorKind kind);
int exit_code(ErrorKind kind);

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

}  // namespace codir
