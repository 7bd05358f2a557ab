#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fepr {

// Invalid or inconsistent configuration (shapes, missing checkpoints, bad JSON values).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An API was used out of order, e.g. stepping a finished episode.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// NaN or Inf where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed binary file; offset is the byte position where parsing failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace fepr
