#pragma once

#include <stdexcept>
#include <string>

namespace abn {

/// Operand shapes do not conform for the requested operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input lies outside the domain of the operation (e.g. an all-masked softmax).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Caller violated a documented precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Fewer than two valid frames in a mini-batch; statistics are undefined.
class DegenerateBatchError : public DomainError {
 public:
  using DomainError::DomainError;
};

}  // namespace abn
