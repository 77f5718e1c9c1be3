#include "yuedesk/error.hpp"

namespace yuedesk {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::config: return "config";
    case ErrorCode::io: return "io";
    case ErrorCode::data: return "data";
    case ErrorCode::shape: return "shape";
    case ErrorCode::token_class: return "token_class";
    case ErrorCode::grammar: return "grammar";
    case ErrorCode::unterminated_audio: return "unterminated_audio";
    case ErrorCode::range: return "range";
    case ErrorCode::insufficient_length: return "insufficient_length";
    case ErrorCode::context_length: return "context_length";
    case ErrorCode::corpus: return "corpus";
    case ErrorCode::exhausted_stream: return "exhausted_stream";
    case ErrorCode::empty_support: return "empty_support";
    case ErrorCode::undefined_loss: return "undefined_loss";
    case ErrorCode::undefined_wer: return "undefined_wer";
    case ErrorCode::undefined_correlation: return "undefined_correlation";
    case ErrorCode::normalization: return "normalization";
    case ErrorCode::zero_energy: return "zero_energy";
    case ErrorCode::divergence: return "divergence";
  }
  return "unknown";
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::config:
      return 2;
    case ErrorCode::empty_support:
    case ErrorCode::undefined_loss:
    case ErrorCode::undefined_wer:
    case ErrorCode::undefined_correlation:
    case ErrorCode::normalization:
    case ErrorCode::zero_energy:
    case ErrorCode::divergence:
      return 4;
    default:
      return 3;
  }
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
      code_(code) {}

void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace yuedesk
