#pragma once

#include <stdexcept>
#include <string>

namespace knowpilot {

// Base of every domain error. code() is the machine-readable ApiError code
// surfaced by the HTTP service and mapped to exit codes by the CLI.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

#define KNOWPILOT_DEFINE_ERROR(Name, code_string)                \
    class Name : public Error {                                  \
    public:                                                      \
        explicit Name(const std::string& message)                \
            : Error(code_string, message) {}                     \
    }

// Caller broke an operation's precondition (wrong state, empty input, ...).
KNOWPILOT_DEFINE_ERROR(PreconditionViolation, "precondition_violation");
// Input is well-formed JSON but fails validation.
KNOWPILOT_DEFINE_ERROR(ValidationError, "validation_error");
KNOWPILOT_DEFINE_ERROR(NotFound, "not_found");

// llm-gateway
KNOWPILOT_DEFINE_ERROR(EndpointUnavailable, "endpoint_unavailable");
KNOWPILOT_DEFINE_ERROR(RequestRejected, "request_rejected");
KNOWPILOT_DEFINE_ERROR(ProtocolError, "protocol_error");
KNOWPILOT_DEFINE_ERROR(MissingBinding, "missing_binding");

// knowledge-store
KNOWPILOT_DEFINE_ERROR(EmbeddingUnavailable, "embedding_unavailable");
KNOWPILOT_DEFINE_ERROR(DegenerateVector, "degenerate_vector");
KNOWPILOT_DEFINE_ERROR(DuplicateDocument, "duplicate_document");
KNOWPILOT_DEFINE_ERROR(StoreCorrupted, "store_corrupted");

// open-search
KNOWPILOT_DEFINE_ERROR(SearchUnavailable, "search_unavailable");

// experience-store
KNOWPILOT_DEFINE_ERROR(ScriptMismatch, "script_mismatch");
KNOWPILOT_DEFINE_ERROR(InvalidPayload, "invalid_payload");

// fusion-pipeline
KNOWPILOT_DEFINE_ERROR(ConfigParseFailure, "config_parse_failure");
KNOWPILOT_DEFINE_ERROR(OutlineParseFailure, "outline_parse_failure");
KNOWPILOT_DEFINE_ERROR(UnknownSection, "unknown_section");
KNOWPILOT_DEFINE_ERROR(PhraseNotFound, "phrase_not_found");
KNOWPILOT_DEFINE_ERROR(IllegalTransition, "illegal_transition");
KNOWPILOT_DEFINE_ERROR(SessionBusy, "session_busy");

// eval-harness
KNOWPILOT_DEFINE_ERROR(JudgeParseFailure, "judge_parse_failure");
KNOWPILOT_DEFINE_ERROR(SessionIncomplete, "session_incomplete");

#undef KNOWPILOT_DEFINE_ERROR

}  // namespace knowpilot
