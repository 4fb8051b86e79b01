#pragma once

#include <stdexcept>
#include <string>

namespace plumeemu {

/// Shape or length disagreement between operands.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A caller violated an operation's precondition (e.g. non-scalar loss).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Invalid user configuration or file contents. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numerical breakdown: non-PD Gram matrix, NaN loss, rank deficiency.
/// Maps to CLI exit code 3.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace plumeemu
