#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace spr {

enum class ErrorCode {
    invalid_argument,
    duplicate,
    not_found,
    parse,
    validation,
    dimension_mismatch,
    corrupt,
    unsupported_version,
    io,
};

inline std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::invalid_argument: return "invalid argument";
        case ErrorCode::duplicate: return "duplicate";
        case ErrorCode::not_found: return "not found";
        case ErrorCode::parse: return "parse error";
        case ErrorCode::validation: return "validation error";
        case ErrorCode::dimension_mismatch: return "dimension mismatch";
        case ErrorCode::corrupt: return "corrupt data";
        case ErrorCode::unsupported_version: return "unsupported version";
        case ErrorCode::io: return "i/o error";
    }
    return "error";
}

/// Every failure raised by the library. The code lets callers (CLI, HTTP
/// handlers) map failures onto exit codes and status codes.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
    if (!condition) {
        fail(code, message);
    }
}

}  // namespace spr
