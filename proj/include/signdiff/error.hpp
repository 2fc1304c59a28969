#pragma once

#include <stdexcept>
#include <string>

namespace signdiff {

// Precondition violations: shape mismatches, invalid ranges, bad configs.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// NaN/Inf appeared where a finite value was required.
class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// File or format problems (SGT1, PNG, JSON manifests).
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) throw InvalidArgument(message);
}

}  // namespace signdiff
