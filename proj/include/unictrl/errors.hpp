#ifndef UNICTRL_ERRORS_HPP
#define UNICTRL_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace unictrl {

// Machine-parseable error categories. The CLI prints exactly one line of the
// form "error:<category>: <message>" and maps each category to a fixed
// nonzero exit code.
enum class ErrorCategory {
    usage,
    config,
    shape,
    numeric,
    io,
    checkpoint_bad_magic,
    checkpoint_version,
    checkpoint_truncated,
    checkpoint_integrity,
    data,
    internal,
};

inline const char* to_string(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::usage: return "usage";
        case ErrorCategory::config: return "config";
        case ErrorCategory::shape: return "shape";
        case ErrorCategory::numeric: return "numeric";
        case ErrorCategory::io: return "io";
        case ErrorCategory::checkpoint_bad_magic: return "checkpoint_bad_magic";
        case ErrorCategory::checkpoint_version: return "checkpoint_version";
        case ErrorCategory::checkpoint_truncated: return "checkpoint_truncated";
        case ErrorCategory::checkpoint_integrity: return "checkpoint_integrity";
        case ErrorCategory::data: return "data";
        case ErrorCategory::internal: return "internal";
    }
    return "internal";
}

inline int exit_code(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::usage: return 2;
        case ErrorCategory::config: return 3;
        case ErrorCategory::shape: return 4;
        case ErrorCategory::numeric: return 5;
        case ErrorCategory::io: return 6;
        case ErrorCategory::checkpoint_bad_magic: return 7;
        case ErrorCategory::checkpoint_version: return 8;
        case ErrorCategory::checkpoint_truncated: return 9;
        case ErrorCategory::checkpoint_integrity: return 10;
        case ErrorCategory::data: return 11;
        case ErrorCategory::internal: return 12;
    }
    return 12;
}

class Error : public std::runtime_error {
  public:
    Error(ErrorCategory category, const std::string& message)
        : std::runtime_error(message), category_(category) {}

    ErrorCategory category() const { return category_; }

  private:
    ErrorCategory category_;
};

[[noreturn]] inline void fail(ErrorCategory category, const std::string& message) {
    throw Error(category, message);
}

[[noreturn]] inline void fail_shape(const std::string& message) {
    throw Error(ErrorCategory::shape, message);
}

[[noreturn]] inline void fail_config(const std::string& message) {
    throw Error(ErrorCategory::config, message);
}

}  // namespace unictrl

#endif
