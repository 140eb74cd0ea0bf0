#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hsic {

// Process exit codes used by the CLI. Stable: shell scripts branch on them.
enum class ErrorCategory : int {
    internal = 1,
    usage = 2,
    config = 3,
    data_not_found = 4,
    data_format = 5,
    checkpoint = 6,
    numeric = 7,
    shape = 8,
    invalid_argument = 9,
};

constexpr int exit_code(ErrorCategory c) { return static_cast<int>(c); }

constexpr std::string_view category_name(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::internal: return "internal";
        case ErrorCategory::usage: return "usage";
        case ErrorCategory::config: return "config";
        case ErrorCategory::data_not_found: return "data-not-found";
        case ErrorCategory::data_format: return "data-format";
        case ErrorCategory::checkpoint: return "checkpoint-mismatch";
        case ErrorCategory::numeric: return "numeric";
        case ErrorCategory::shape: return "shape";
        case ErrorCategory::invalid_argument: return "invalid-argument";
    }
    return "internal";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& w) : Error(ErrorCategory::shape, w) {}
};

struct InvalidArgument : Error {
    explicit InvalidArgument(const std::string& w) : Error(ErrorCategory::invalid_argument, w) {}
};

// Raised when an operation is asked to normalise a zero vector.
struct DegenerateInputError : Error {
    explicit DegenerateInputError(const std::string& w) : Error(ErrorCategory::numeric, w) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& w) : Error(ErrorCategory::numeric, w) {}
};

struct DataNotFoundError : Error {
    explicit DataNotFoundError(const std::string& w) : Error(ErrorCategory::data_not_found, w) {}
};

struct DataFormatError : Error {
    explicit DataFormatError(const std::string& w) : Error(ErrorCategory::data_format, w) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& w) : Error(ErrorCategory::config, w) {}
};

struct CheckpointError : Error {
    explicit CheckpointError(const std::string& w) : Error(ErrorCategory::checkpoint, w) {}
};

}  // namespace hsic
