#pragma once

#include <stdexcept>

namespace geoinpaint {

/// Malformed configuration or command-line input.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Unreadable, truncated or malformed input data.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace geoinpaint
