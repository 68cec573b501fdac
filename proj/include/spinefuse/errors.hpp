#pragma once

#include <stdexcept>

namespace spinefuse {

// Bad arguments, malformed configuration. CLI exit code 1.
struct param_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Unreadable or inconsistent data files. CLI exit code 2.
struct data_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// NaN/Inf or diverging numerics. CLI exit code 3.
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace spinefuse
