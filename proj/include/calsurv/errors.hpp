#pragma once
#include <stdexcept>
#include <string>

namespace calsurv {

// Bad input: malformed file, out-of-range values, unusable configuration.
struct validation_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A solver failed to converge or a quantity is undefined for the given data.
struct numerical_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace calsurv
