#include "knowpilot/domain.hpp"

#include <algorithm>
#include <set>

#include "knowpilot/errors.hpp"

namespace knowpilot {

std::vector<std::string> validate_config(const AgentConfig& config) {
    std::vector<std::string> violations;
    if (trim(config.persona).empty()) violations.emplace_back("persona empty");
    if (trim(config.style).empty()) violations.emplace_back("style empty");
    if (config.revision < 0) violations.emplace_back("revision negative");
    return violations;
}

std::vector<std::string> validate_config_history(std::span<const AgentConfig> history) {
    std::vector<std::string> violations;
    for (std::size_t i = 0; i < history.size(); ++i) {
        for (auto& v : validate_config(history[i])) {
            if (std::find(violations.begin(), violations.end(), v) == violations.end())
                violations.push_back(std::move(v));
        }
        if (i == 0) continue;
        const auto step = history[i].revision - history[i - 1].revision;
        const char* problem = step > 1 ? "revision skipped" : step < 1 ? "revision not increasing" : nullptr;
        if (problem && std::find(violations.begin(), violations.end(), problem) == violations.end())
            violations.emplace_back(problem);
    }
    return violations;
}

const OutlineSection* Outline::find(std::string_view section_id) const {
    for (const auto& s : sections)
        if (s.id == section_id) return &s;
    return nullptr;
}

OutlineSection* Outline::find(std::string_view section_id) {
    for (auto& s : sections)
        if (s.id == section_id) return &s;
    return nullptr;
}

std::vector<std::string> Outline::headings() const {
    std::vector<std::string> out;
    out.reserve(sections.size());
    for (const auto& s : sections) out.push_back(s.heading);
    return out;
}

std::vector<std::string> validate_outline(const Outline& outline) {
    std::vector<std::string> violations;
    if (outline.sections.empty()) violations.emplace_back("no sections");
    std::set<std::string> ids;
    for (const auto& s : outline.sections) {
        if (s.id.empty()) violations.emplace_back("empty section id");
        if (!ids.insert(s.id).second) violations.push_back("duplicate section id " + s.id);
        if (trim(s.heading).empty()) violations.push_back("empty heading for " + s.id);
    }
    return violations;
}

ExperienceKind payload_kind(const ExperiencePayload& payload) {
    switch (payload.index()) {
        case 0: return ExperienceKind::direct_edit;
        case 1: return ExperienceKind::corrective_prompt;
        default: return ExperienceKind::refinement;
    }
}

// ---------------------------------------------------------------------------
// Names

namespace {

template <typename Enum, std::size_t N>
Enum parse_name(std::string_view name, const Enum (&all)[N], const char* what) {
    for (Enum e : all)
        if (to_string(e) == name) return e;
    throw ValidationError(std::string("unknown ") + what + ": " + std::string(name));
}

constexpr ExperienceKind kAllExperienceKinds[] = {
    ExperienceKind::direct_edit, ExperienceKind::corrective_prompt, ExperienceKind::refinement};
constexpr EditKind kAllEditKinds[] = {EditKind::keep, EditKind::erase, EditKind::insert};
constexpr ProvenanceSource kAllProvenanceSources[] = {
    ProvenanceSource::explicit_private, ProvenanceSource::explicit_open,
    ProvenanceSource::experiential};

}  // namespace

std::string to_string(SectionStatus status) {
    switch (status) {
        case SectionStatus::pending: return "pending";
        case SectionStatus::retrieved: return "retrieved";
        case SectionStatus::drafted: return "drafted";
        case SectionStatus::accepted: return "accepted";
    }
    return "?";
}

std::string to_string(EditKind kind) {
    switch (kind) {
        case EditKind::keep: return "keep";
        case EditKind::erase: return "delete";
        case EditKind::insert: return "insert";
    }
    return "?";
}

std::string to_string(ExperienceKind kind) {
    switch (kind) {
        case ExperienceKind::direct_edit: return "direct_edit";
        case ExperienceKind::corrective_prompt: return "corrective_prompt";
        case ExperienceKind::refinement: return "refinement";
    }
    return "?";
}

std::string to_string(SessionState state) {
    switch (state) {
        case SessionState::new_: return "new";
        case SessionState::configured: return "configured";
        case SessionState::outlined: return "outlined";
        case SessionState::drafting: return "drafting";
        case SessionState::complete: return "complete";
    }
    return "?";
}

std::string to_string(EventKind kind) {
    switch (kind) {
        case EventKind::priors_submitted: return "priors_submitted";
        case EventKind::config_edited: return "config_edited";
        case EventKind::outline_generated: return "outline_generated";
        case EventKind::outline_edited: return "outline_edited";
        case EventKind::section_retrieved: return "section_retrieved";
        case EventKind::section_drafted: return "section_drafted";
        case EventKind::section_edited: return "section_edited";
        case EventKind::corrective_prompt: return "corrective_prompt";
        case EventKind::refinement: return "refinement";
        case EventKind::section_accepted: return "section_accepted";
    }
    return "?";
}

std::string to_string(ProvenanceSource source) {
    switch (source) {
        case ProvenanceSource::explicit_private: return "explicit_private";
        case ProvenanceSource::explicit_open: return "explicit_open";
        case ProvenanceSource::experiential: return "experiential";
    }
    return "?";
}

SectionStatus parse_section_status(std::string_view name) {
    return parse_name(name, kAllSectionStatuses, "section status");
}
ExperienceKind parse_experience_kind(std::string_view name) {
    return parse_name(name, kAllExperienceKinds, "experience kind");
}
SessionState parse_session_state(std::string_view name) {
    return parse_name(name, kAllSessionStates, "session state");
}
EventKind parse_event_kind(std::string_view name) {
    return parse_name(name, kAllEventKinds, "event kind");
}

// ---------------------------------------------------------------------------
// Canonical JSON

void to_json(Json& j, const AgentConfig& v) {
    j = Json{{"persona", v.persona},
             {"style", v.style},
             {"structure_expectations", v.structure_expectations},
             {"target_domain", v.target_domain},
             {"created_at", v.created_at},
             {"revision", v.revision}};
}

void from_json(const Json& j, AgentConfig& v) {
    j.at("persona").get_to(v.persona);
    j.at("style").get_to(v.style);
    v.structure_expectations = j.value("structure_expectations", std::vector<std::string>{});
    v.target_domain = j.value("target_domain", std::string{});
    v.created_at = j.value("created_at", TimestampMs{0});
    v.revision = j.value("revision", std::int64_t{0});
}

void to_json(Json& j, const OutlineSection& v) {
    j = Json{{"id", v.id}, {"heading", v.heading}, {"intent_notes", v.intent_notes},
             {"status", to_string(v.status)}};
}

void from_json(const Json& j, OutlineSection& v) {
    j.at("id").get_to(v.id);
    j.at("heading").get_to(v.heading);
    v.intent_notes = j.value("intent_notes", std::string{});
    v.status = parse_section_status(j.value("status", std::string{"pending"}));
}

void to_json(Json& j, const Outline& v) {
    j = Json{{"title", v.title}, {"sections", v.sections}, {"revision", v.revision}};
}

void from_json(const Json& j, Outline& v) {
    j.at("title").get_to(v.title);
    j.at("sections").get_to(v.sections);
    v.revision = j.value("revision", std::int64_t{0});
}

void to_json(Json& j, const CharSpan& v) { j = Json::array({v.start, v.end}); }

void from_json(const Json& j, CharSpan& v) {
    j.at(0).get_to(v.start);
    j.at(1).get_to(v.end);
}

void to_json(Json& j, const KnowledgeChunk& v) {
    j = Json{{"chunk_id", v.chunk_id},
             {"source_doc", v.source_doc},
             {"text", v.text},
             {"char_span", v.char_span},
             {"embedding", encode_embedding(v.embedding)}};
}

void from_json(const Json& j, KnowledgeChunk& v) {
    j.at("chunk_id").get_to(v.chunk_id);
    j.at("source_doc").get_to(v.source_doc);
    j.at("text").get_to(v.text);
    j.at("char_span").get_to(v.char_span);
    v.embedding = decode_embedding(j.at("embedding").get<std::string>());
}

void to_json(Json& j, const RetrievalResult& v) {
    j = Json{{"chunk", v.chunk}, {"score", v.score}, {"rank", v.rank}};
}

void from_json(const Json& j, RetrievalResult& v) {
    j.at("chunk").get_to(v.chunk);
    j.at("score").get_to(v.score);
    j.at("rank").get_to(v.rank);
}

void to_json(Json& j, const WebResult& v) {
    j = Json{{"title", v.title}, {"snippet", v.snippet}, {"url", v.url},
             {"rank", v.rank}, {"fetched_at", v.fetched_at}};
}

void from_json(const Json& j, WebResult& v) {
    v.title = j.value("title", std::string{});
    v.snippet = j.value("snippet", std::string{});
    j.at("url").get_to(v.url);
    v.rank = j.value("rank", 0);
    v.fetched_at = j.value("fetched_at", TimestampMs{0});
}

void to_json(Json& j, const EditOp& v) {
    j = Json{{"kind", to_string(v.kind)}, {"tokens", v.tokens}};
}

void from_json(const Json& j, EditOp& v) {
    v.kind = parse_name(j.at("kind").get<std::string>(), kAllEditKinds, "edit kind");
    j.at("tokens").get_to(v.tokens);
}

void to_json(Json& j, const DirectEditPayload& v) {
    j = Json{{"original", v.original}, {"revised", v.revised}, {"edit_script", v.edit_script}};
}

void from_json(const Json& j, DirectEditPayload& v) {
    j.at("original").get_to(v.original);
    j.at("revised").get_to(v.revised);
    j.at("edit_script").get_to(v.edit_script);
}

void to_json(Json& j, const CorrectivePromptPayload& v) {
    j = Json{{"instruction", v.instruction}, {"before", v.before}, {"after", v.after}};
}

void from_json(const Json& j, CorrectivePromptPayload& v) {
    j.at("instruction").get_to(v.instruction);
    j.at("before").get_to(v.before);
    j.at("after").get_to(v.after);
}

void to_json(Json& j, const RefinementPayload& v) {
    j = Json{{"original_phrase", v.original_phrase}, {"revised_phrase", v.revised_phrase}};
}

void from_json(const Json& j, RefinementPayload& v) {
    j.at("original_phrase").get_to(v.original_phrase);
    j.at("revised_phrase").get_to(v.revised_phrase);
}

void to_json(Json& j, const ExperienceRecord& v) {
    Json payload;
    std::visit([&](const auto& p) { payload = p; }, v.payload);
    j = Json{{"record_id", v.record_id},
             {"kind", to_string(v.kind)},
             {"context_descriptor", v.context_descriptor},
             {"payload", payload},
             {"embedding", encode_embedding(v.embedding)},
             {"captured_at", v.captured_at},
             {"session_id", v.session_id}};
}

void from_json(const Json& j, ExperienceRecord& v) {
    j.at("record_id").get_to(v.record_id);
    v.kind = parse_experience_kind(j.at("kind").get<std::string>());
    j.at("context_descriptor").get_to(v.context_descriptor);
    const auto& payload = j.at("payload");
    switch (v.kind) {
        case ExperienceKind::direct_edit: v.payload = payload.get<DirectEditPayload>(); break;
        case ExperienceKind::corrective_prompt:
            v.payload = payload.get<CorrectivePromptPayload>();
            break;
        case ExperienceKind::refinement: v.payload = payload.get<RefinementPayload>(); break;
    }
    v.embedding = decode_embedding(j.at("embedding").get<std::string>());
    j.at("captured_at").get_to(v.captured_at);
    v.session_id = j.value("session_id", std::string{});
}

void to_json(Json& j, const SessionEvent& v) {
    j = Json{{"event_id", v.event_id},     {"at", v.at},
             {"kind", to_string(v.kind)},  {"wait_ms", v.wait_ms},
             {"latency_ms", v.latency_ms}, {"detail", v.detail}};
}

void from_json(const Json& j, SessionEvent& v) {
    j.at("event_id").get_to(v.event_id);
    j.at("at").get_to(v.at);
    v.kind = parse_event_kind(j.at("kind").get<std::string>());
    v.wait_ms = j.value("wait_ms", std::int64_t{0});
    v.latency_ms = j.value("latency_ms", std::int64_t{0});
    v.detail = j.value("detail", Json::object());
}

void to_json(Json& j, const ProvenanceRef& v) {
    j = Json{{"source", to_string(v.source)}, {"id", v.id}};
}

void from_json(const Json& j, ProvenanceRef& v) {
    v.source = parse_name(j.at("source").get<std::string>(), kAllProvenanceSources,
                          "provenance source");
    j.at("id").get_to(v.id);
}

void to_json(Json& j, const SectionDraft& v) {
    j = Json{{"section_id", v.section_id}, {"text", v.text},
             {"provenance", v.provenance}, {"version", v.version}};
}

void from_json(const Json& j, SectionDraft& v) {
    j.at("section_id").get_to(v.section_id);
    j.at("text").get_to(v.text);
    v.provenance = j.value("provenance", std::vector<ProvenanceRef>{});
    j.at("version").get_to(v.version);
}

void to_json(Json& j, const EvidenceHit& v) {
    j = Json{{"chunk_id", v.chunk_id}, {"score", v.score}, {"rank", v.rank}};
}

void from_json(const Json& j, EvidenceHit& v) {
    j.at("chunk_id").get_to(v.chunk_id);
    j.at("score").get_to(v.score);
    j.at("rank").get_to(v.rank);
}

void to_json(Json& j, const ExperienceHit& v) {
    j = Json{{"record_id", v.record_id}, {"score", v.score}};
}

void from_json(const Json& j, ExperienceHit& v) {
    j.at("record_id").get_to(v.record_id);
    j.at("score").get_to(v.score);
}

void to_json(Json& j, const SectionEvidence& v) {
    j = Json{{"queries", v.queries},
             {"private", v.private_hits},
             {"web", v.web},
             {"experience", v.experience},
             {"search_degraded", v.search_degraded}};
}

void from_json(const Json& j, SectionEvidence& v) {
    v.queries = j.value("queries", std::vector<std::string>{});
    v.private_hits = j.value("private", std::vector<EvidenceHit>{});
    v.web = j.value("web", std::vector<WebResult>{});
    v.experience = j.value("experience", std::vector<ExperienceHit>{});
    v.search_degraded = j.value("search_degraded", false);
}

void to_json(Json& j, const Session& v) {
    j = Json{{"session_id", v.session_id},
             {"created_at", v.created_at},
             {"state", to_string(v.state)},
             {"brief", v.brief},
             {"config", v.config ? Json(*v.config) : Json(nullptr)},
             {"outline", v.outline ? Json(*v.outline) : Json(nullptr)},
             {"drafts", v.drafts},
             {"evidence", v.evidence},
             {"event_log", v.event_log},
             {"clock_ms", v.clock_ms}};
}

void from_json(const Json& j, Session& v) {
    j.at("session_id").get_to(v.session_id);
    v.created_at = j.value("created_at", TimestampMs{0});
    v.state = parse_session_state(j.at("state").get<std::string>());
    v.brief = j.value("brief", std::string{});
    v.config.reset();
    if (j.contains("config") && !j["config"].is_null()) v.config = j["config"].get<AgentConfig>();
    v.outline.reset();
    if (j.contains("outline") && !j["outline"].is_null()) v.outline = j["outline"].get<Outline>();
    v.drafts = j.value("drafts", std::map<std::string, SectionDraft>{});
    v.evidence = j.value("evidence", std::map<std::string, SectionEvidence>{});
    v.event_log = j.value("event_log", std::vector<SessionEvent>{});
    v.clock_ms = j.value("clock_ms", std::int64_t{0});
}

}  // namespace knowpilot
