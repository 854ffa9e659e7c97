// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace codistill {

// Base for every error raised by the library. The C API maps each subclass
// onto a distinct status code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Input outside an operation's mathematical domain (log of a non-positive
// value, division by zero, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf produced or supplied where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents (CSV rows, checkpoint bytes).
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace codistill
