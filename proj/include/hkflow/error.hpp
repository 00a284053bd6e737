#pragma once

#include <stdexcept>
#include <string>

namespace hkflow {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid input: malformed configuration, violated preconditions, dimension mismatches.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

enum class IntegrationErrc {
    NonUniqueContinuation,
    SwitchCapExceeded,
    StepSizeUnderflow,
};

class IntegrationError : public Error {
public:
    IntegrationError(IntegrationErrc code, const std::string& what) : Error(what), code_(code) {}
    IntegrationErrc code() const noexcept { return code_; }

private:
    IntegrationErrc code_;
};

} // namespace hkflow
