#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace slalom {

enum class ErrorCode {
  InvalidParams,
  OutOfVocab,
  TooLong,
  EmptySequence,
  AllMasked,
  TooLongForExact,
  ConstantModel,
  NearDegenerate,
  DegenerateValues,
  OutOfRange,
  DivergedLoss,
  InfeasibleSStep,
  SequenceTooShort,
  OracleUnavailable,
  ProtocolError,
  Timeout,
  DimMismatch,
  DimTooSmall,
  LengthMismatch,
  DegenerateConstantInput,
  SingleClass,
  VocabMismatch,
  Io,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace slalom
