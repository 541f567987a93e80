// Copyright (C) 2026 The stylemask Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace stylemask {

/// Raised when a caller hands an operation arguments that violate its contract.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when an image-text scorer cannot produce scores.
class ScorerUnavailable : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a generator or segmenter backend cannot serve a request.
class BackendUnavailable : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when training produces a non-finite loss.
class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

template <class... Args>
std::string concat(Args&&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}

template <class... Args>
[[noreturn]] void throw_invalid(Args&&... args) {
    throw InvalidInput(concat(std::forward<Args>(args)...));
}

}  // namespace detail

}  // namespace stylemask
