#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bpf {

// Invalid model parameter (alpha out of range, non-unit direction, ...).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid function argument (empty sample list, n < 1, grid mismatch, ...).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Normalized estimate requested from an empty ensemble.
class ExtinctionError : public std::runtime_error {
 public:
  explicit ExtinctionError(const std::string& what, std::size_t epoch = 0)
      : std::runtime_error(what), epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

// Grid oracle failures: domain too small, excessive clamping in strict mode.
class GridError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Branching would create more particles than the engine will hold.
class PopulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bpf
