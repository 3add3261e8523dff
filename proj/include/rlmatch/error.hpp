#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rlmatch {

// One violated constraint, addressed by a dotted field path such as "learner.gamma".
struct FieldProblem {
  std::string field;
  std::string message;
};

// Caller supplied something outside an operation's domain.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed serialized data. offset() is the byte position where decoding failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// A learning update would have produced a non-finite value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An estimator did not have enough retained samples.
class InsufficientData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rlmatch
