#pragma once

// Session state machine. A session is a fold over its event log:
//
//   new --priors_submitted--> configured --outline_generated--> outlined
//   outlined --section_retrieved--> drafting --(last section_accepted)--> complete
//
// Per section: pending -> retrieved -> drafted -> (drafted | retrieved)* -> accepted.
// Retitling a drafted section sends it back to retrieved.

#include <optional>
#include <span>

#include "knowpilot/domain.hpp"

namespace knowpilot {

/// Whether `kind` may occur while the session is in `state`.
bool event_allowed(SessionState state, EventKind kind);

/// Section status a section-scoped event requires; nullopt for session-level
/// events.
std::optional<SectionStatus> required_section_status(EventKind kind);

/// True for the events that capture an experiential record.
bool is_intervention(EventKind kind);

/// Validates the event against the grammar and applies it. Throws
/// IllegalTransition (or ValidationError for a malformed detail) and leaves
/// `session` untouched on rejection.
void apply_event(Session& session, const SessionEvent& event);

Session replay(const std::string& session_id, TimestampMs created_at, std::span<const SessionEvent> events);

/// Count of intervention events in the log.
std::size_t intervention_count(const Session& session);

/// Where the interaction clock resumes: end of the last event, else creation.
TimestampMs resume_point(const Session& session);

}  // namespace knowpilot
