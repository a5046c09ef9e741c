#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mfh {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape/rank disagreement between tensors or between a tensor and an op contract.
struct DimensionError : Error {
  using Error::Error;
};

// Out-of-range or inconsistent configuration value.
struct ParameterError : Error {
  using Error::Error;
};

// Malformed file content; carries the byte offset where parsing failed.
struct FormatError : Error {
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (byte offset " + std::to_string(offset) + ")"),
        byte_offset(offset) {}
  std::size_t byte_offset;
};

// Non-finite value where the pipeline requires finite arithmetic.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace mfh
