#pragma once

#include <stdexcept>
#include <string>

namespace latentscope {

/// Invalid configuration or precondition violated by caller-supplied settings.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or truncated file.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor / volume shapes.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values or a numerical procedure that cannot proceed.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Missing or stale artifact from an earlier pipeline stage.
class DependencyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A statistic that is undefined for the given input (e.g. correlation of a constant vector).
class UndefinedStatistic : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

}  // namespace latentscope
