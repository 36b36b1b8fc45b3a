#ifndef HDIFF_ERRORS_HPP
#define HDIFF_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace hdiff {

// Error taxonomy mirrors the CLI exit codes: ConfigError -> 1, DataError -> 2,
// NumericalError -> 3.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : DataError {
    explicit IoError(const std::string& msg) : DataError(msg) {}
};

struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace hdiff

#endif
