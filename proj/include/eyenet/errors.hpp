#pragma once

#include <stdexcept>
#include <string>

namespace eyenet {

// Base of every error the library throws. The CLI maps the subclasses onto
// exit codes (usage 1, data 2, numeric 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A configuration yields an impossible layout (zero-size output, bad widths,
// parameter budget exceeded, unknown config key).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Bad input data: out-of-range labels, orphan files, undecodable images,
// corrupt checkpoints.
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace eyenet
