#pragma once

#include <stdexcept>
#include <string>

namespace flowcast {

// Error classes map to CLI exit codes: config=2, data=3, numeric=4.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/usage violations inside the tensor and layer machinery.
struct ShapeError : std::invalid_argument {
  explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

constexpr int kExitConfigError = 2;
constexpr int kExitDataError = 3;
constexpr int kExitNumericError = 4;

}  // namespace flowcast
