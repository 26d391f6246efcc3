// Copyright 2026 The moectc Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace moectc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent shapes, hyperparameters or variant/stage combinations.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad data handed to an operation: NaN logits, zero-length sequences, ...
class InputError : public Error {
 public:
  using Error::Error;
};

// Malformed files, unreadable paths.
class IoError : public Error {
 public:
  using Error::Error;
};

// Training/evaluation failures (divergence, missing targets).
class PipelineError : public Error {
 public:
  using Error::Error;
};

}  // namespace moectc
