#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cognialign {

// Violated precondition or invariant of an operation (bad shapes, empty
// inputs, out-of-range arguments).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or inconsistent file contents.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
  FormatError(const std::string& what, std::uint64_t byte_offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(byte_offset) + ")"),
        byte_offset_(byte_offset), has_offset_(true) {}

  bool has_offset() const { return has_offset_; }
  std::uint64_t byte_offset() const { return byte_offset_; }

 private:
  std::uint64_t byte_offset_ = 0;
  bool has_offset_ = false;
};

// Numerical failure during training or attribution (NaN gradient etc.).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cognialign
