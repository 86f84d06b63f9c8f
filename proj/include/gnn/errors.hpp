#pragma once

#include <stdexcept>
#include <string>

namespace gnn {

// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or extents that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// An index outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

// A precondition of an operation was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Mathematically undefined request, e.g. max over an empty tensor.
class DomainError : public Error {
 public:
  using Error::Error;
};

// A configured resource cap was exceeded.
class ResourceError : public Error {
 public:
  using Error::Error;
};

// Malformed file content.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Well-formed input that violates a data invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Non-finite values during training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace gnn
