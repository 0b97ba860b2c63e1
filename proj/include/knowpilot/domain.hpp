#pragma once

// Shared domain types. Every type has a canonical snake_case JSON form used
// for persistence, the HTTP API and fixtures.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "knowpilot/util.hpp"

namespace knowpilot {

inline constexpr std::size_t kDefaultEmbeddingDimension = 384;

using Embedding = std::vector<float>;

// ---------------------------------------------------------------------------
// Task-specific priors

struct AgentConfig {
    std::string persona;
    std::string style;
    std::vector<std::string> structure_expectations;
    std::string target_domain;
    TimestampMs created_at = 0;
    std::int64_t revision = 0;

    bool operator==(const AgentConfig&) const = default;
};

/// Violations of the single-value invariants. Empty means valid.
std::vector<std::string> validate_config(const AgentConfig& config);

/// Validates each revision and that successive revisions increase by one.
std::vector<std::string> validate_config_history(std::span<const AgentConfig> history);

// ---------------------------------------------------------------------------
// Outline

enum class SectionStatus { pending, retrieved, drafted, accepted };

struct OutlineSection {
    std::string id;
    std::string heading;
    std::string intent_notes;
    SectionStatus status = SectionStatus::pending;

    bool operator==(const OutlineSection&) const = default;
};

struct Outline {
    std::string title;
    std::vector<OutlineSection> sections;
    std::int64_t revision = 0;

    const OutlineSection* find(std::string_view section_id) const;
    OutlineSection* find(std::string_view section_id);
    std::vector<std::string> headings() const;

    bool operator==(const Outline&) const = default;
};

std::vector<std::string> validate_outline(const Outline& outline);

// ---------------------------------------------------------------------------
// Explicit knowledge

struct CharSpan {
    std::size_t start = 0;
    std::size_t end = 0;

    std::size_t length() const { return end - start; }
    bool operator==(const CharSpan&) const = default;
};

struct KnowledgeChunk {
    std::string chunk_id;
    std::string source_doc;
    std::string text;
    CharSpan char_span;  // byte offsets into the UTF-8 source body
    Embedding embedding;

    bool operator==(const KnowledgeChunk&) const = default;
};

struct RetrievalResult {
    KnowledgeChunk chunk;
    double score = 0.0;
    int rank = 0;

    bool operator==(const RetrievalResult&) const = default;
};

struct WebResult {
    std::string title;
    std::string snippet;
    std::string url;
    int rank = 0;
    TimestampMs fetched_at = 0;

    bool operator==(const WebResult&) const = default;
};

// ---------------------------------------------------------------------------
// Experiential knowledge

enum class EditKind { keep, erase, insert };

struct EditOp {
    EditKind kind = EditKind::keep;
    std::vector<std::string> tokens;

    bool operator==(const EditOp&) const = default;
};

using EditScript = std::vector<EditOp>;

struct DirectEditPayload {
    std::string original;
    std::string revised;
    EditScript edit_script;

    bool operator==(const DirectEditPayload&) const = default;
};

struct CorrectivePromptPayload {
    std::string instruction;
    std::string before;
    std::string after;

    bool operator==(const CorrectivePromptPayload&) const = default;
};

struct RefinementPayload {
    std::string original_phrase;
    std::string revised_phrase;

    bool operator==(const RefinementPayload&) const = default;
};

enum class ExperienceKind { direct_edit, corrective_prompt, refinement };

using ExperiencePayload = std::variant<DirectEditPayload, CorrectivePromptPayload, RefinementPayload>;

/// Kind implied by the payload alternative.
ExperienceKind payload_kind(const ExperiencePayload& payload);

struct ExperienceRecord {
    std::string record_id;
    ExperienceKind kind = ExperienceKind::direct_edit;
    std::string context_descriptor;
    ExperiencePayload payload;
    Embedding embedding;
    TimestampMs captured_at = 0;
    std::string session_id;

    bool operator==(const ExperienceRecord&) const = default;
};

// ---------------------------------------------------------------------------
// Sessions

enum class SessionState { new_, configured, outlined, drafting, complete };

enum class EventKind {
    priors_submitted,
    config_edited,
    outline_generated,
    outline_edited,
    section_retrieved,
    section_drafted,
    section_edited,
    corrective_prompt,
    refinement,
    section_accepted,
};

inline constexpr SessionState kAllSessionStates[] = {
    SessionState::new_, SessionState::configured, SessionState::outlined,
    SessionState::drafting, SessionState::complete};

inline constexpr EventKind kAllEventKinds[] = {
    EventKind::priors_submitted,  EventKind::config_edited,     EventKind::outline_generated,
    EventKind::outline_edited,    EventKind::section_retrieved, EventKind::section_drafted,
    EventKind::section_edited,    EventKind::corrective_prompt, EventKind::refinement,
    EventKind::section_accepted};

inline constexpr SectionStatus kAllSectionStatuses[] = {
    SectionStatus::pending, SectionStatus::retrieved, SectionStatus::drafted,
    SectionStatus::accepted};

struct SessionEvent {
    std::string event_id;
    TimestampMs at = 0;
    EventKind kind = EventKind::priors_submitted;
    // User think time before the event and model time spent producing it.
    // Their sum over the log is the session's interaction clock.
    std::int64_t wait_ms = 0;
    std::int64_t latency_ms = 0;
    Json detail = Json::object();

    bool operator==(const SessionEvent&) const = default;
};

enum class ProvenanceSource { explicit_private, explicit_open, experiential };

struct ProvenanceRef {
    ProvenanceSource source = ProvenanceSource::explicit_private;
    std::string id;  // chunk_id, url, or record_id

    bool operator==(const ProvenanceRef&) const = default;
};

struct SectionDraft {
    std::string section_id;
    std::string text;
    std::vector<ProvenanceRef> provenance;
    std::int64_t version = 0;

    bool operator==(const SectionDraft&) const = default;
};

struct EvidenceHit {
    std::string chunk_id;
    double score = 0.0;
    int rank = 0;

    bool operator==(const EvidenceHit&) const = default;
};

struct ExperienceHit {
    std::string record_id;
    double score = 0.0;

    bool operator==(const ExperienceHit&) const = default;
};

/// What retrieve_for_section gathered, cached so later regenerations use the
/// same evidence.
struct SectionEvidence {
    std::vector<std::string> queries;
    std::vector<EvidenceHit> private_hits;
    std::vector<WebResult> web;
    std::vector<ExperienceHit> experience;
    bool search_degraded = false;

    bool operator==(const SectionEvidence&) const = default;
};

struct Session {
    std::string session_id;
    TimestampMs created_at = 0;
    SessionState state = SessionState::new_;
    std::string brief;
    std::optional<AgentConfig> config;
    std::optional<Outline> outline;
    std::map<std::string, SectionDraft> drafts;
    std::map<std::string, SectionEvidence> evidence;
    std::vector<SessionEvent> event_log;
    std::int64_t clock_ms = 0;

    double clock_seconds() const { return static_cast<double>(clock_ms) / 1000.0; }

    bool operator==(const Session&) const = default;
};

// ---------------------------------------------------------------------------
// Names

std::string to_string(SectionStatus status);
std::string to_string(EditKind kind);
std::string to_string(ExperienceKind kind);
std::string to_string(SessionState state);
std::string to_string(EventKind kind);
std::string to_string(ProvenanceSource source);

/// Throw ValidationError for unknown names.
SectionStatus parse_section_status(std::string_view name);
ExperienceKind parse_experience_kind(std::string_view name);
SessionState parse_session_state(std::string_view name);
EventKind parse_event_kind(std::string_view name);

// ---------------------------------------------------------------------------
// Canonical JSON

void to_json(Json& j, const AgentConfig& v);
void from_json(const Json& j, AgentConfig& v);
void to_json(Json& j, const OutlineSection& v);
void from_json(const Json& j, OutlineSection& v);
void to_json(Json& j, const Outline& v);
void from_json(const Json& j, Outline& v);
void to_json(Json& j, const CharSpan& v);
void from_json(const Json& j, CharSpan& v);
void to_json(Json& j, const KnowledgeChunk& v);
void from_json(const Json& j, KnowledgeChunk& v);
void to_json(Json& j, const RetrievalResult& v);
void from_json(const Json& j, RetrievalResult& v);
void to_json(Json& j, const WebResult& v);
void from_json(const Json& j, WebResult& v);
void to_json(Json& j, const EditOp& v);
void from_json(const Json& j, EditOp& v);
void to_json(Json& j, const DirectEditPayload& v);
void from_json(const Json& j, DirectEditPayload& v);
void to_json(Json& j, const CorrectivePromptPayload& v);
void from_json(const Json& j, CorrectivePromptPayload& v);
void to_json(Json& j, const RefinementPayload& v);
void from_json(const Json& j, RefinementPayload& v);
void to_json(Json& j, const ExperienceRecord& v);
void from_json(const Json& j, ExperienceRecord& v);
void to_json(Json& j, const SessionEvent& v);
void from_json(const Json& j, SessionEvent& v);
void to_json(Json& j, const ProvenanceRef& v);
void from_json(const Json& j, ProvenanceRef& v);
void to_json(Json& j, const SectionDraft& v);
void from_json(const Json& j, SectionDraft& v);
void to_json(Json& j, const EvidenceHit& v);
void from_json(const Json& j, EvidenceHit& v);
void to_json(Json& j, const ExperienceHit& v);
void from_json(const Json& j, ExperienceHit& v);
void to_json(Json& j, const SectionEvidence& v);
void from_json(const Json& j, SectionEvidence& v);
void to_json(Json& j, const Session& v);
void from_json(const Json& j, Session& v);

}  // namespace knowpilot
