#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mlsteer {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition on a mathematical argument is violated (order range,
/// nonpositive Gamma argument, non-commuting coefficient matrices, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

class OverflowError : public DomainError {
public:
    using DomainError::DomainError;
};

class DimensionError : public DomainError {
public:
    using DomainError::DomainError;
};

class PermutabilityError : public DomainError {
public:
    PermutabilityError(double commutator_norm, double tolerance)
        : DomainError("coefficient matrices do not commute: ||AB - BA|| = " +
                      std::to_string(commutator_norm) + " exceeds " + std::to_string(tolerance)),
          commutator_norm_(commutator_norm) {}

    double commutator_norm() const noexcept { return commutator_norm_; }

private:
    double commutator_norm_;
};

/// A series or iteration did not reach its stopping criterion.
class ConvergenceError : public Error {
public:
    using Error::Error;
};

/// Synthesis was requested on a Grammian that is not positive definite.
class SingularGrammianError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration file (schema, parse, or cross-field validation).
class ConfigError : public Error {
public:
    using Error::Error;

    explicit ConfigError(std::vector<std::string> issues) : Error(join(issues)), issues_(std::move(issues)) {}

    /// Every individual violation; empty for single-message errors.
    const std::vector<std::string>& issues() const noexcept { return issues_; }

private:
    static std::string join(const std::vector<std::string>& issues) {
        std::string s = "invalid configuration (" + std::to_string(issues.size()) + " issue" +
                        (issues.size() == 1 ? "" : "s") + ")";
        for (const auto& i : issues) s += "\n  " + i;
        return s;
    }

    std::vector<std::string> issues_;
};

}  // namespace mlsteer
