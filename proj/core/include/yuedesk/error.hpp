#pragma once

#include <stdexcept>
#include <string>

namespace yuedesk {

enum class ErrorCode {
  config,
  io,
  data,
  shape,
  token_class,
  grammar,
  unterminated_audio,
  range,
  insufficient_length,
  context_length,
  corpus,
  exhausted_stream,
  empty_support,
  undefined_loss,
  undefined_wer,
  undefined_correlation,
  normalization,
  zero_energy,
  divergence,
};

const char* error_code_name(ErrorCode code);

// Exit-code buckets used by the CLI: 2 config, 3 data, 4 numerical/training.
int exit_code_for(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace yuedesk
