#pragma once

#include <stdexcept>
#include <string>

namespace ripeseg {

/// Root of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand dimensions do not satisfy an operation's shape contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A configuration value is out of its documented domain.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an API precondition that is not about shapes.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Pooling indices do not address the tensor they are applied to.
class CorruptIndexError : public Error {
 public:
  using Error::Error;
};

/// An operation produced NaN or Inf. `op()` names the first offender.
class NumericError : public Error {
 public:
  NumericError(std::string op, const std::string& what)
      : Error(what), op_(std::move(op)) {}
  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class ManifestError : public Error {
 public:
  using Error::Error;
};

class LabelError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ripeseg
