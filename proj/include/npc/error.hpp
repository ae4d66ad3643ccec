#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace npc {

enum class ErrorCode {
  InvalidArgument,
  MalformedFile,
  IoFailure,
  InsufficientData,
  NotColor,
  ShapeMismatch,
  TooManySymbols,
  CorruptStream,
  InvalidArchitecture,
  DimMismatch,
  NonFinite,
  InsufficientInitialBits,
  BinsMismatch,
  HashMismatch,
  UnsupportedCodec,
  ZeroLength,
  DegenerateInput,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so that
/// callers (the CLI in particular) can map it onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace npc
