#ifndef PROMPTFORGE_ERRORS_HPP
#define PROMPTFORGE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace promptforge {

/// Base class for all promptforge errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// A file or wire payload did not match its documented format.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration: bad paths, bad parameter ranges, contract misuse.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Inconsistent or corrupt data: duplicate ids, count mismatches, checksum
/// failures, split leakage.
class DataError : public Error {
public:
    using Error::Error;
};

/// Connection-level failure talking to a remote endpoint (after retries).
class TransportError : public Error {
public:
    TransportError(const std::string& msg, int attempts)
        : Error(msg), attempts_(attempts) {}
    int attempts() const { return attempts_; }

private:
    int attempts_ = 0;
};

/// The endpoint answered with an HTTP error status.
class EndpointError : public Error {
public:
    EndpointError(const std::string& msg, int status, std::string body)
        : Error(msg), status_(status), body_(std::move(body)) {}
    int status() const { return status_; }
    const std::string& body() const { return body_; }

private:
    int status_ = 0;
    std::string body_;
};

/// Model output contained no parseable frame label in any accepted form.
class UnparseableOutputError : public Error {
public:
    using Error::Error;
};

/// Output parsed into a well-formed triple that is not a leaf path of the
/// active taxonomy. Counted separately from garbled output downstream.
class InvalidLabelError : public Error {
public:
    InvalidLabelError(const std::string& msg, std::string actor,
                      std::string reason, std::string cause)
        : Error(msg),
          actor_(std::move(actor)),
          reason_(std::move(reason)),
          cause_(std::move(cause)) {}
    const std::string& actor() const { return actor_; }
    const std::string& reason() const { return reason_; }
    const std::string& cause() const { return cause_; }

private:
    std::string actor_, reason_, cause_;
};

/// A prompt template referenced an unknown placeholder or was rendered with
/// arguments that violate its contract.
class TemplateError : public Error {
public:
    using Error::Error;
};

/// The reply to a refinement/debate prompt did not contain the delimited
/// block the template contract requires.
class ExtractionError : public Error {
public:
    using Error::Error;
};

/// Rationale synthesis produced no parseable sample for an exemplar.
class SynthesisError : public Error {
public:
    using Error::Error;
};

/// The shared model-call budget ran out.
class BudgetError : public Error {
public:
    using Error::Error;
};

}  // namespace promptforge

#endif  // PROMPTFORGE_ERRORS_HPP
