#include "skillbank/error.hpp"

namespace skillbank {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::unknown_target: return "UnknownTarget";
    case ErrorCode::invalid_operation: return "InvalidOperation";
    case ErrorCode::sequence_gap: return "SequenceGap";
    case ErrorCode::ledger_tampered: return "LedgerTampered";
    case ErrorCode::unrecognized_format: return "UnrecognizedFormat";
    case ErrorCode::missing_instance_id: return "MissingInstanceId";
    case ErrorCode::arity_mismatch: return "ArityMismatch";
    case ErrorCode::missing_context: return "MissingContext";
    case ErrorCode::malformed_output: return "MalformedOutput";
    case ErrorCode::schema_violation: return "SchemaViolation";
    case ErrorCode::range_violation: return "RangeViolation";
    case ErrorCode::embedder_failure: return "EmbedderFailure";
    case ErrorCode::empty_pool: return "EmptyPool";
    case ErrorCode::missing_component: return "MissingComponent";
    case ErrorCode::group_too_small: return "GroupTooSmall";
    case ErrorCode::non_finite_input: return "NonFiniteInput";
    case ErrorCode::provider_failure: return "ProviderFailure";
    case ErrorCode::script_miss: return "ScriptMiss";
    case ErrorCode::network_denied: return "NetworkDenied";
    case ErrorCode::missing_predecessor: return "MissingPredecessor";
    case ErrorCode::invalid_config: return "InvalidConfig";
    case ErrorCode::io_error: return "IoError";
  }
  return "Unknown";
}

}  // namespace skillbank
