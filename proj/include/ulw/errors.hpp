#pragma once

#include <stdexcept>
#include <string>

namespace ulw {

// Base of every error raised by the library. Subclasses name the failing
// contract so callers (and the CLI) can report a one-line reason.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define ULW_DEFINE_ERROR(Name)            \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  }

ULW_DEFINE_ERROR(IoError);
ULW_DEFINE_ERROR(FormatError);
ULW_DEFINE_ERROR(PairingError);
ULW_DEFINE_ERROR(ManifestError);
ULW_DEFINE_ERROR(DatasetError);
ULW_DEFINE_ERROR(ParameterError);
ULW_DEFINE_ERROR(DimensionError);
ULW_DEFINE_ERROR(AggregationError);
ULW_DEFINE_ERROR(ConfigurationError);
ULW_DEFINE_ERROR(CheckpointError);
ULW_DEFINE_ERROR(EnvironmentError);
ULW_DEFINE_ERROR(TrainingError);
ULW_DEFINE_ERROR(ReportError);

#undef ULW_DEFINE_ERROR

}  // namespace ulw
