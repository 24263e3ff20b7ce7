#pragma once

#include <stdexcept>
#include <string>

namespace bisnn {

/// Base class for every error raised by the library. `kind()` is a short
/// machine-readable tag used by the CLI error JSON.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}

    [[nodiscard]] const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& what) : Error("shape_mismatch", what) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error("invalid_config", what) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& what) : Error("non_finite", what) {}
};

struct ParseError : Error {
    explicit ParseError(const std::string& what) : Error("parse_error", what) {}
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error("io_error", what) {}
};

inline void require(bool cond, const char* msg) {
    if (!cond) throw ConfigError(msg);
}

inline void require_shape(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

} // namespace bisnn
