/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <stdexcept>
#include <string>

namespace vdg {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input text (JSON, JSON lines, weight headers).
class ParseError : public Error {
 public:
  using Error::Error;
};

// Well-formed input that breaks a data invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A caller broke a documented precondition (empty list, bad argument).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Tensor or feature dimensions do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

}  // namespace vdg
