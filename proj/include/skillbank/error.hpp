#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace skillbank {

enum class ErrorCode {
  // bank
  unknown_target,
  invalid_operation,
  sequence_gap,
  ledger_tampered,
  // trajectory
  unrecognized_format,
  missing_instance_id,
  arity_mismatch,
  // protocol
  missing_context,
  malformed_output,
  schema_violation,
  range_violation,
  // retrieval
  embedder_failure,
  empty_pool,
  // reward
  missing_component,
  // grpo
  group_too_small,
  non_finite_input,
  // providers
  provider_failure,
  script_miss,
  network_denied,
  // orchestrator / cli
  missing_predecessor,
  invalid_config,
  io_error,
};

std::string_view to_string(ErrorCode code);

// All domain failures surface as this type; `code()` selects the contract error.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace skillbank
