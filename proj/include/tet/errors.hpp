#pragma once

#include <stdexcept>
#include <string>

namespace tet {

// Thrown on malformed files, out-of-range events, label/frame mismatches.
// The CLI maps this to exit code 3.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when a primitive produces NaN/Inf or the training NaN guard trips.
// The CLI maps this to exit code 4.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Shape/contract violations between tensors and operations.
class ShapeError : public std::invalid_argument {
public:
    explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

} // namespace tet
