#pragma once

#include <stdexcept>
#include <string>

namespace chdqr {

// Exit-code mapping for the CLI: 2 config, 3 data, 4 numeric.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace chdqr
