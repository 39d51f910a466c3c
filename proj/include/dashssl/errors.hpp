#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dashssl {

/// Raised when a caller hands an operation data that violates its precondition.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Training produced a non-finite loss or parameter.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& stage, std::size_t step)
      : std::runtime_error(stage + " diverged at step " + std::to_string(step)),
        step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// The growing theory-mode batch n_t exceeded the configured cap.
class CapExceeded : public std::runtime_error {
 public:
  CapExceeded(std::size_t step, double requested, std::size_t cap)
      : std::runtime_error("batch size " + std::to_string(requested) + " at step " +
                           std::to_string(step) + " exceeds cap " + std::to_string(cap)),
        step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Derived convergence constants make the selection argument vacuous.
class InfeasibleConstants : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dashssl
