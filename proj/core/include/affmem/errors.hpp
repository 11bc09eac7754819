#pragma once

#include <stdexcept>
#include <string>

namespace affmem {

/// Bad configuration or violated call contract (dimension mismatch, missing
/// label, malformed file). The CLI maps this to exit code 1.
class config_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Numerical failure (non-finite loss or gradient). The CLI maps this to
/// exit code 2.
class numeric_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace affmem
