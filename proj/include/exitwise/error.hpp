// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace exitwise {

/// Base of every error the engine throws. `exit_code()` is what the CLI
/// returns when the error escapes a command.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual int exit_code() const { return 1; }
};

/// Shape or argument contract violated by a caller.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration: unknown keys, bad values, inconsistent specs.
class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 2; }
};

/// Non-finite values where finite ones were required.
class NumericError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 3; }
};

class CheckpointError : public Error {
 public:
  enum class Kind { Io, BadMagic, BadVersion, ArchitectureMismatch, ShapeMismatch, Truncated, MissingTensor };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }
  int exit_code() const override { return 4; }

 private:
  Kind kind_;
};

/// No exit in the catalog fits the requested budget.
class BudgetInfeasible : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 5; }
};

class DataError : public Error {
 public:
  enum class Kind { Io, MalformedHeader, UnsupportedEncoding, MissingManifestRow, SampleRateMismatch, Empty, TooFewSpeakers, BadLabel };

  DataError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace exitwise
