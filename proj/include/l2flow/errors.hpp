#pragma once

#include <stdexcept>
#include <string>

namespace l2flow {

/// Rejected input: bad arguments, malformed files, unknown config keys.
/// The CLI maps this to exit code 2.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A computation that started but could not finish. CLI exit code 1.
class RuntimeFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite state detected during integration or training.
class BlowUpError : public RuntimeFailure {
public:
    BlowUpError(const std::string& what, double time)
        : RuntimeFailure(what), time_(time) {}
    double time() const noexcept { return time_; }

private:
    double time_;
};

class QuadratureError : public RuntimeFailure {
public:
    QuadratureError(const std::string& what, double last_estimate)
        : RuntimeFailure(what), last_estimate_(last_estimate) {}
    double last_estimate() const noexcept { return last_estimate_; }

private:
    double last_estimate_;
};

} // namespace l2flow
