#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace r3m {

/// Argument outside the mathematical domain of an operation (bad dimension,
/// parameter out of range, out-of-range index).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Operation requested in a dataset mode that does not support it
/// (e.g. a design matrix for trajectory-segment data).
class ModeError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Optimizer produced a non-finite objective.
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, std::size_t epoch)
        : std::runtime_error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}

    std::size_t epoch() const noexcept { return epoch_; }

private:
    std::size_t epoch_;
};

/// Invalid experiment configuration; `path` names the offending field.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& path, const std::string& what)
        : std::runtime_error(path + ": " + what), path_(path) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

class InsufficientSampleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace r3m
