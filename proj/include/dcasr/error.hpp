#pragma once

#include <stdexcept>
#include <string>

namespace dcasr {

enum class ErrorKind {
  invalid_input,
  dimension,
  index,
  format,
  numeric,
  consistency,
  empty_dataset,
  config,
  data,
  dependency,
  contract,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define DCASR_DEFINE_ERROR(Name, Kind)                                    \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

DCASR_DEFINE_ERROR(InvalidInputError, invalid_input)
DCASR_DEFINE_ERROR(DimensionError, dimension)
DCASR_DEFINE_ERROR(IndexError, index)
DCASR_DEFINE_ERROR(FormatError, format)
DCASR_DEFINE_ERROR(NumericError, numeric)
DCASR_DEFINE_ERROR(ConsistencyError, consistency)
DCASR_DEFINE_ERROR(EmptyDatasetError, empty_dataset)
DCASR_DEFINE_ERROR(ConfigError, config)
DCASR_DEFINE_ERROR(DataError, data)
DCASR_DEFINE_ERROR(DependencyError, dependency)
DCASR_DEFINE_ERROR(ContractError, contract)

#undef DCASR_DEFINE_ERROR

// Process exit code used by the command-line tool for each error family.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
    case ErrorKind::invalid_input:
      return 2;
    case ErrorKind::format:
    case ErrorKind::data:
    case ErrorKind::empty_dataset:
    case ErrorKind::index:
    case ErrorKind::dimension:
    case ErrorKind::consistency:
    case ErrorKind::contract:
      return 3;
    case ErrorKind::dependency:
      return 4;
    case ErrorKind::numeric:
      return 5;
  }
  return 1;
}

}  // namespace dcasr
