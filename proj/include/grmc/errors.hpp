#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace grmc {

/// Argument outside the mathematical domain of an operation (u ∉ (0,1), λ ≤ 0, K < 1, ...).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// Tensor operands whose shapes do not compose.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Problem size above what an exact routine can enumerate.
struct CapacityError : std::length_error {
  using std::length_error::length_error;
};

/// Caller broke an API contract (e.g. grad_check on a non-scalar program).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Invalid or unknown configuration; the CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed file (bad magic, truncated payload, unparsable CSV).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Derived architecture leaves a cell without any kept input edge.
struct DegenerateGenotypeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite loss during training.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::size_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace grmc
