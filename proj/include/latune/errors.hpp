#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace latune {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
public:
    DimensionMismatch(std::size_t expected, std::size_t actual)
        : Error("dimension mismatch: expected " + std::to_string(expected) + ", got " +
                std::to_string(actual)),
          expected_(expected), actual_(actual) {}

    [[nodiscard]] std::size_t expected() const { return expected_; }
    [[nodiscard]] std::size_t actual() const { return actual_; }

private:
    std::size_t expected_;
    std::size_t actual_;
};

// An entry lies outside its box; `index` names the offending coordinate.
class OutOfBounds : public Error {
public:
    OutOfBounds(std::size_t index, double value, const std::string& box = "bounds")
        : Error("value " + std::to_string(value) + " at index " + std::to_string(index) +
                " is outside " + box),
          index_(index) {}

    [[nodiscard]] std::size_t index() const { return index_; }

private:
    std::size_t index_;
};

class OutOfUnitBox : public OutOfBounds {
public:
    OutOfUnitBox(std::size_t index, double value) : OutOfBounds(index, value, "[0, 1]") {}
};

class InvalidConfig : public Error {
public:
    using Error::Error;
};

class EmptyResult : public Error {
public:
    using Error::Error;
};

class InsufficientData : public Error {
public:
    using Error::Error;
};

class CholeskyFailure : public Error {
public:
    using Error::Error;
};

class BatchTooSmall : public Error {
public:
    using Error::Error;
};

class UnknownCandidate : public Error {
public:
    using Error::Error;
};

class NoActiveRegions : public Error {
public:
    using Error::Error;
};

// Wraps a failure raised by an objective, carrying the parameters it was called with.
class EvaluationError : public Error {
public:
    EvaluationError(std::vector<double> theta, const std::string& what)
        : Error("evaluation failed: " + what), theta_(std::move(theta)) {}

    [[nodiscard]] const std::vector<double>& theta() const { return theta_; }

private:
    std::vector<double> theta_;
};

}  // namespace latune
