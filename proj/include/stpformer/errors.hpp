#pragma once

#include <stdexcept>
#include <string>

namespace stpformer {

// Shape or extent disagreement between tensors. Messages always name the
// offending shapes so failures are diagnosable from the string alone.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid caller-supplied value (out-of-range index, bad enum string, ...).
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Rejected configuration: failed validation or unknown keys.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Unreadable or inconsistent on-disk data.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf detected mid-computation; message names the stage.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// API used out of order (e.g. backward on an empty tape).
struct StateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace stpformer
