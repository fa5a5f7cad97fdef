#pragma once

#include <stdexcept>
#include <string>

namespace folio {

// Broad failure classes; the CLI maps these onto exit codes.
enum class ErrorKind {
    usage,
    data,
    feasibility,
    numerical,
    contract,
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

// Tensor shapes do not conform to an operation's arity.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& message) : Error(ErrorKind::contract, message) {}
};

// Argument outside an operation's mathematical domain (division by zero,
// sqrt of a negative, zero variance in a ratio, ...).
class DomainError : public Error {
public:
    explicit DomainError(const std::string& message) : Error(ErrorKind::numerical, message) {}
};

class ContractError : public Error {
public:
    explicit ContractError(const std::string& message) : Error(ErrorKind::contract, message) {}
};

class InfeasibleError : public Error {
public:
    explicit InfeasibleError(const std::string& message) : Error(ErrorKind::feasibility, message) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& message) : Error(ErrorKind::data, message) {}
};

}  // namespace folio
