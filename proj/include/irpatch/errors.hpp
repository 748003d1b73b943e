#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace irpatch {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller violated an operation's precondition (bad shape, out-of-range parameter, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

/// An experiment or component configuration failed validation.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// The peer of an external detector could not be reached or went away mid-request.
class TransportError : public Error {
public:
    TransportError(std::int64_t request_id, const std::string& what)
        : Error("request " + std::to_string(request_id) + ": " + what), request_id_(request_id) {}
    std::int64_t request_id() const noexcept { return request_id_; }

private:
    std::int64_t request_id_;
};

/// The peer answered, but the reply was malformed or did not pair with the request.
class ProtocolError : public Error {
public:
    using Error::Error;
};

class DegenerateFitError : public Error {
public:
    using Error::Error;
};

/// The optimizer produced a NaN/inf loss; the message carries the iteration.
class NonFiniteLossError : public Error {
public:
    NonFiniteLossError(int iteration, const std::string& what)
        : Error("iteration " + std::to_string(iteration) + ": " + what), iteration_(iteration) {}
    int iteration() const noexcept { return iteration_; }

private:
    int iteration_;
};

}  // namespace irpatch
