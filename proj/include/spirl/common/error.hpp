// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace spirl {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or out-of-range indices.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed or mismatched binary/text file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf reached a loss or parameter.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// External environment wire-protocol violation or timeout.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace spirl
