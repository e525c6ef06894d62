#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace doge {

// Error taxonomy shared by every module. Callers catch by type; messages name
// the offending value or key.

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class MalformedSequence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MarkerNotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ContextOverflow : public std::length_error {
 public:
  using std::length_error::length_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t step, const std::string& what)
      : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + what),
        step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace doge
