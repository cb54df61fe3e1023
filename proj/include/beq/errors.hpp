#pragma once

#include <stdexcept>
#include <string>

namespace beq {

// Error taxonomy. Each category maps onto a distinct CLI exit code in the
// tools layer: validation-type errors exit 2, runtime/fit failures exit 3.

/// Argument outside the mathematical domain of an operation (p outside (0,1), scale <= 0, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Too few observations / subjects for the requested computation.
class InsufficientDataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A derived endpoint (AUC, Cmax) is not positive and cannot be log-transformed.
class EndpointError : public std::runtime_error {
public:
    EndpointError(const std::string& subject, const std::string& what)
        : std::runtime_error("subject " + subject + ": " + what), subject_(subject) {}
    const std::string& subject() const noexcept { return subject_; }

private:
    std::string subject_;
};

/// ka == ke flip-flop point of the one-compartment closed form.
class SingularityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller violated a structural precondition (e.g. period effects in a parallel model).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// SAEM produced a non-finite quantity. The message carries the tail of the trace.
class FitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Fisher information could not be inverted.
class SingularInformationError : public std::runtime_error {
public:
    SingularInformationError(const std::string& what, double condition_number)
        : std::runtime_error(what + " (condition number " + std::to_string(condition_number) + ")"),
          condition_number_(condition_number) {}
    double condition_number() const noexcept { return condition_number_; }

private:
    double condition_number_;
};

/// Invalid study configuration / scenario / CLI input.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Every replicate of a scenario failed.
class StudyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace beq
