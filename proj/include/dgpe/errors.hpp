#pragma once

#include <stdexcept>
#include <string>

namespace dgpe {

struct DomainError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct FactorizationFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StepFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateColumn : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace dgpe
