#pragma once

#include <stdexcept>
#include <string>

namespace pcv {

/// Malformed model or point-cloud document.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not chain (expected vs actual is in the message).
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller violated an operation's precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// The clean input is not classified as its stored label.
class MisclassifiedError : public ContractError {
 public:
  MisclassifiedError(int predicted, int expected)
      : ContractError("input misclassified: predicted class " + std::to_string(predicted) +
                      ", expected class " + std::to_string(expected)),
        predicted_(predicted),
        expected_(expected) {}

  int predicted() const { return predicted_; }
  int expected() const { return expected_; }

 private:
  int predicted_;
  int expected_;
};

}  // namespace pcv
