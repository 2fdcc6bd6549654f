#pragma once

#include <stdexcept>
#include <string>

namespace spv {

// Base of every exception thrown by the library.
class error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (bad files, metadata mismatch,
// violated preconditions on values).
class data_error : public error {
public:
  using error::error;
};

// Filesystem failures: missing files, unwritable paths.
class io_error : public data_error {
public:
  using data_error::data_error;
};

// Invalid parameter values (negative weights, tau outside [0,1], ...).
class config_error : public error {
public:
  using error::error;
};

} // namespace spv
