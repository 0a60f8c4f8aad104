// Copyright 2026 The psnas Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef PSNAS_ERROR_HPP_
#define PSNAS_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace psnas {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid user input: arguments, files, configurations.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A training or search loss became non-finite or exceeded the guard.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::string last_checkpoint)
      : Error(what), last_checkpoint_(std::move(last_checkpoint)) {}

  const std::string& last_checkpoint() const noexcept { return last_checkpoint_; }

 private:
  std::string last_checkpoint_;
};

}  // namespace psnas

#endif  // PSNAS_ERROR_HPP_
