#pragma once

#include <stdexcept>
#include <string>

namespace gps {

enum class ErrorKind {
    Config,
    Dimension,
    Contract,
    State,
    Input,
    Format,
    Compatibility,
    Numeric,
    Integrity,
};

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

  private:
    ErrorKind kind_;
};

#define GPS_DEFINE_ERROR(Name, Kind)                                          \
    class Name : public Error {                                               \
      public:                                                                 \
        explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
    };

GPS_DEFINE_ERROR(ConfigError, Config)
GPS_DEFINE_ERROR(DimensionError, Dimension)
GPS_DEFINE_ERROR(ContractError, Contract)
GPS_DEFINE_ERROR(StateError, State)
GPS_DEFINE_ERROR(InputError, Input)
GPS_DEFINE_ERROR(FormatError, Format)
GPS_DEFINE_ERROR(CompatibilityError, Compatibility)
GPS_DEFINE_ERROR(NumericError, Numeric)
GPS_DEFINE_ERROR(IntegrityError, Integrity)

#undef GPS_DEFINE_ERROR

// Process exit code for the CLI: 2 config, 3 data/format, 4 numeric, 5 integrity.
int exit_code(ErrorKind kind) noexcept;
const char* kind_name(ErrorKind kind) noexcept;

}  // namespace gps
