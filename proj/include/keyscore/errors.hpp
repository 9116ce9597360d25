#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace keyscore {

/// Base of every error raised by the library. `kind()` is a short stable tag
/// used by the CLI for machine-parseable error lines.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

/// Malformed input file content; carries the 1-based line number when known.
class ParseError : public Error {
public:
    ParseError(const std::string& message, std::size_t line = 0)
        : Error("parse", line ? "line " + std::to_string(line) + ": " + message : message),
          line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// A value violates a documented invariant or precondition.
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& message) : Error("validation", message) {}
};

/// Remote provider failure. `status` is the HTTP status, 0 when no response arrived.
class TransportError : public Error {
public:
    TransportError(const std::string& message, int status, bool retryable)
        : Error("transport", message), status_(status), retryable_(retryable) {}

    int status() const noexcept { return status_; }
    bool retryable() const noexcept { return retryable_; }

private:
    int status_;
    bool retryable_;
};

/// Replay-only completion lookup found no fixture for the prompt digest.
class FixtureMiss : public Error {
public:
    explicit FixtureMiss(const std::string& digest)
        : Error("fixture_miss", "fixture miss for prompt digest " + digest), digest_(digest) {}

    const std::string& digest() const noexcept { return digest_; }

private:
    std::string digest_;
};

/// The completion text held no usable JSON extraction object.
class ExtractionError : public Error {
public:
    ExtractionError(const std::string& message, std::string raw)
        : Error("extraction", message), raw_(std::move(raw)) {}

    const std::string& raw() const noexcept { return raw_; }

private:
    std::string raw_;
};

}  // namespace keyscore
