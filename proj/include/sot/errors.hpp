#pragma once

#include <stdexcept>
#include <string>

namespace sot {

// Shape mismatch between operands (matmul, deflation, gradient hookup).
class ShapeError : public std::invalid_argument {
public:
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Input outside an operation's mathematical domain (asymmetry, negative spectrum).
class DomainError : public std::domain_error {
public:
    explicit DomainError(const std::string& msg) : std::domain_error(msg) {}
};

// Iterative algorithm failed to converge or produced non-finite values.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// A required singular value is numerically zero; division is impossible.
class NearSingularError : public NumericError {
public:
    explicit NearSingularError(const std::string& msg) : NumericError(msg) {}
};

// Power iteration start vector lies in the null space of the input.
class DegenerateDirectionError : public NumericError {
public:
    explicit DegenerateDirectionError(const std::string& msg) : NumericError(msg) {}
};

// Forward cache does not match the backward call that consumes it.
class ContractError : public std::logic_error {
public:
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// Bad run configuration (unknown key, unparsable value, inconsistent sizes).
class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

} // namespace sot
