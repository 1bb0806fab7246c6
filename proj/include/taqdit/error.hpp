// Copyright 2026 The taqdit Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef TAQDIT_ERROR_HPP_
#define TAQDIT_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace taqdit {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape or length disagreement between operands.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Argument outside the operation's domain (empty tensors, k >= C_i, ...).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Option combination that has no meaning (splitting with trained factors).
class IncompatibleOptions : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

/// Non-finite value encountered where a finite one is required.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Binary file problems. The kind maps onto CLI exit codes.
class FormatError : public Error {
public:
    enum class Kind { Io, BadMagic, Crc, Version, Truncated, Malformed };

    FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

} // namespace taqdit

#endif // TAQDIT_ERROR_HPP_
