#pragma once

#include <stdexcept>
#include <string>

namespace quotrec {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape mismatch between tensors.
struct DimensionError : Error {
    using Error::Error;
};

// Caller violated an operation contract (e.g. non-scalar loss).
struct ContractError : Error {
    using Error::Error;
};

// NaN or otherwise unusable numeric input.
struct NumericError : Error {
    using Error::Error;
};

// Bad hyperparameter or config file.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed corpus / embedding / checkpoint data.
struct DataError : Error {
    using Error::Error;
};

} // namespace quotrec
