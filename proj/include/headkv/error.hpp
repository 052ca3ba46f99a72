// Copyright (C) 2026 The headkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace headkv {

/// Base class for every contract violation raised by the library.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), m_kind(std::move(kind)) {}

    /// Short machine-readable category, e.g. "invalid_input".
    const std::string& kind() const noexcept { return m_kind; }

private:
    std::string m_kind;
};

/// Malformed or out-of-contract arguments.
class InvalidInput : public Error {
public:
    explicit InvalidInput(const std::string& message) : Error("invalid_input", message) {}
};

/// Global budget too small to give every head its local window.
class InfeasibleBudget : public Error {
public:
    explicit InfeasibleBudget(const std::string& message) : Error("infeasible_budget", message) {}
};

/// A retention policy produced an unusable slot selection.
class PolicyError : public Error {
public:
    explicit PolicyError(const std::string& message) : Error("policy_error", message) {}
};

/// File could not be read, written or parsed.
class IoError : public Error {
public:
    explicit IoError(const std::string& message) : Error("io_error", message) {}
};

#define HEADKV_CHECK(cond, ExceptionType, message) \
    do {                                           \
        if (!(cond)) {                             \
            throw ExceptionType(message);          \
        }                                          \
    } while (false)

}  // namespace headkv
