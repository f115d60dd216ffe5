// Copyright (c) 2026 The memprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace memprobe {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or parameter shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Token id, row index or similar out of range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Misuse of an operation contract that is not a shape problem
/// (non-scalar loss, empty mask, empty suffix, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

#define MEMPROBE_CONTRACT_ERROR(Name) \
  class Name : public ContractError {  \
   public:                             \
    using ContractError::ContractError; \
  };

MEMPROBE_CONTRACT_ERROR(SplitError)
MEMPROBE_CONTRACT_ERROR(SamplingError)
MEMPROBE_CONTRACT_ERROR(MappingError)
MEMPROBE_CONTRACT_ERROR(MethodError)
MEMPROBE_CONTRACT_ERROR(GenerationError)
MEMPROBE_CONTRACT_ERROR(ComparisonError)

#undef MEMPROBE_CONTRACT_ERROR

/// Invalid user-supplied configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed checkpoint or corpus file.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  explicit FormatError(const std::string& what) : Error(what) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_ = 0;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, double last_finite_loss)
      : Error(what + " (last finite loss " + std::to_string(last_finite_loss) + ")"),
        last_finite_loss_(last_finite_loss) {}

  double last_finite_loss() const noexcept { return last_finite_loss_; }

 private:
  double last_finite_loss_;
};

}  // namespace memprobe
