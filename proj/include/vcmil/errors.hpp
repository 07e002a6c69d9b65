// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace vcmil {

/// Operand shapes do not agree with what an operation needs.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller broke a precondition (empty bag, non-scalar loss, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Bad or inconsistent configuration, including checkpoint/config mismatches.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DataErrorCode {
  kIo,
  kBadMagic,
  kUnsupportedVersion,
  kTruncated,
  kDimMismatch,
  kManifest,
  kGroundTruth,
};

const char* to_string(DataErrorCode code);

/// Problems with files on disk: feature files, manifests, ground truth.
class DataError : public std::runtime_error {
 public:
  DataError(DataErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  DataErrorCode code() const { return code_; }

 private:
  DataErrorCode code_;
};

/// A metric is undefined for the given labels (e.g. single-class ground truth).
class MetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Training produced a non-finite loss.
class NumericAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vcmil
