#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace handaug {

// A caller violated a shape or size contract.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InvalidPose : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A finger (or the palm) has coincident consecutive joints, so its
// directions are undefined.
class DecompositionSingular : public std::runtime_error {
 public:
  explicit DecompositionSingular(std::string part)
      : std::runtime_error("decomposition singular at " + part), part_(std::move(part)) {}
  const std::string& part() const noexcept { return part_; }

 private:
  std::string part_;
};

// NaN or infinity showed up where a finite value is required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " at byte " + std::to_string(offset)), message_(what), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }
  // Message without the offset suffix.
  const std::string& message() const noexcept { return message_; }

 private:
  std::string message_;
  std::uint64_t offset_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace handaug
