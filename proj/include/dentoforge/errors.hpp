#pragma once

#include <stdexcept>
#include <string>

namespace dentoforge {

// Error taxonomy mirrors the CLI exit codes: validation 2, numeric 3, io 4.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dentoforge
