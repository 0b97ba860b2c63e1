#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "knowpilot/domain.hpp"
#include "knowpilot/experience_store.hpp"
#include "knowpilot/fusion.hpp"
#include "knowpilot/knowledge_store.hpp"
#include "knowpilot/llm_gateway.hpp"
#include "knowpilot/open_search.hpp"

namespace knowpilot {

// ---------------------------------------------------------------------------
// Requests

/// Either a structured edit of config fields or a free-text instruction that
/// the model applies. JSON: {"instruction": "..."} or any subset of
/// {"persona", "style", "structure_expectations", "target_domain"}.
struct ConfigChange {
    std::optional<std::string> persona;
    std::optional<std::string> style;
    std::optional<std::vector<std::string>> structure_expectations;
    std::optional<std::string> target_domain;
    std::optional<std::string> instruction;

    static ConfigChange field(const std::string& name, const Json& value);
    static ConfigChange from_instruction(std::string text);
    bool is_instruction() const { return instruction.has_value(); }
};

void from_json(const Json& j, ConfigChange& v);
void to_json(Json& j, const ConfigChange& v);

enum class OutlineOp { add, remove, reorder, retitle };

/// add: heading, optional intent_notes and position (default end).
/// remove: section_id. retitle: section_id, heading, optional intent_notes.
/// reorder: either section_id plus position, or a full `order` of ids.
struct OutlineCommand {
    OutlineOp op = OutlineOp::add;
    std::string section_id;
    std::string heading;
    std::optional<std::string> intent_notes;
    std::optional<std::size_t> position;
    std::vector<std::string> order;

    static OutlineCommand add(std::string heading, std::string intent_notes = {},
                              std::optional<std::size_t> position = std::nullopt);
    static OutlineCommand remove(std::string section_id);
    static OutlineCommand move(std::string section_id, std::size_t position);
    static OutlineCommand reorder(std::vector<std::string> order);
    static OutlineCommand retitle(std::string section_id, std::string heading);
};

std::string to_string(OutlineOp op);
void from_json(const Json& j, OutlineCommand& v);
void to_json(Json& j, const OutlineCommand& v);

/// Applies one command to a copy of `outline`. New sections get the next
/// free "sec-N" id. Throws UnknownSection, PreconditionViolation (removing
/// the last section) or ValidationError.
Outline apply_outline_command(const Outline& outline, const OutlineCommand& command);

enum class ActionKind { direct_edit, corrective_prompt, refinement, accept };

struct UserAction {
    ActionKind kind = ActionKind::accept;
    std::string revised_text;     // direct_edit
    std::string instruction;      // corrective_prompt
    std::string original_phrase;  // refinement
    std::string revised_phrase;   // refinement

    static UserAction direct_edit(std::string revised_text);
    static UserAction corrective(std::string instruction);
    static UserAction refine(std::string original_phrase, std::string revised_phrase);
    static UserAction accept();
};

std::string to_string(ActionKind kind);
void from_json(const Json& j, UserAction& v);
void to_json(Json& j, const UserAction& v);

// ---------------------------------------------------------------------------
// Persistence

/// One directory per session under `root`: session.json (id, creation
/// time), events.jsonl (the source of truth), and the derived config.json,
/// outline.json and drafts/<section_id>.md. An empty root keeps nothing.
class SessionRepository {
public:
    explicit SessionRepository(std::filesystem::path root);

    bool persistent() const { return !root_.empty(); }
    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path session_dir(const std::string& session_id) const;

    void create(const Session& session);
    void append(const std::string& session_id, const SessionEvent& event);
    void write_snapshots(const Session& session);

    bool exists(const std::string& session_id) const;
    /// Replays events.jsonl. Throws NotFound or StoreCorrupted.
    Session load(const std::string& session_id) const;
    std::vector<std::string> list() const;

private:
    std::filesystem::path root_;
};

// ---------------------------------------------------------------------------
// Pipeline

struct PipelineOptions {
    int top_k = kDefaultTopK;
    int search_limit = kDefaultSearchLimit;
    int experience_limit = kDefaultExperienceLimit;
    int keyword_queries = 3;
    std::size_t token_budget = kDefaultTokenBudget;
    /// Throw SessionBusy instead of waiting when another op holds the session.
    bool fail_fast_when_busy = false;
    /// Sees every fused prompt sent for generation.
    std::function<void(const std::string& session_id, const std::string& section_id, const FusedPrompt&)>
        on_fused_prompt;
};

struct PipelineDeps {
    std::shared_ptr<const LlmGateway> gateway;
    std::shared_ptr<KnowledgeStore> knowledge;
    std::shared_ptr<SearchProvider> search;
    std::shared_ptr<ExperienceStore> experience;
    TemplateSet templates;
    /// Session clock and event ids. Keep it separate from the stores' runtime
    /// when the interaction clock must be exact.
    Runtime runtime;
    std::filesystem::path sessions_dir;
};

struct SectionRetrieval {
    std::vector<RetrievalResult> private_results;
    std::vector<WebResult> web;
    std::vector<ScoredRecord> experience;
    bool search_degraded = false;
};

/// Gateway request tags used by the pipeline.
namespace tags {
inline constexpr const char* kParsePriors = "parse_priors";
inline constexpr const char* kEditConfig = "edit_config";
inline constexpr const char* kOutline = "outline";
inline constexpr const char* kKeywords = "keywords";
inline constexpr const char* kSection = "section";
inline constexpr const char* kCorrective = "corrective";
}  // namespace tags

/// Parses a model reply holding a JSON config object. nullopt when it does
/// not contain one with non-empty persona and style.
std::optional<AgentConfig> parse_config_reply(std::string_view text);
/// "Title: ..." plus numbered "N. heading :: intent" lines. nullopt when no
/// section line is found.
std::optional<Outline> parse_outline_reply(std::string_view text, std::string_view fallback_title);
/// Non-empty lines with list markers stripped, duplicates removed.
std::vector<std::string> parse_keyword_reply(std::string_view text);

/// Plain-language rendering of a config, used as the text of config edits.
std::string describe_config(const AgentConfig& config);
/// Numbered heading list, used as the text of outline edits.
std::string describe_outline(const Outline& outline);

/// Session orchestration. Every mutating op on one session is serialized;
/// distinct sessions proceed concurrently. Each op reads the session clock
/// once at its start and records one event.
class Pipeline {
public:
    Pipeline(PipelineDeps deps, PipelineOptions options = {});

    Session create_session();
    Session session(const std::string& session_id);
    std::vector<std::string> session_ids() const;

    AgentConfig parse_priors(const std::string& session_id, const std::string& brief);
    AgentConfig edit_config(const std::string& session_id, const ConfigChange& change);
    Outline generate_outline(const std::string& session_id);
    Outline edit_outline(const std::string& session_id, const OutlineCommand& command);
    SectionRetrieval retrieve_for_section(const std::string& session_id, const std::string& section_id);
    /// Fused prompt for a section from its cached evidence.
    FusedPrompt fused_prompt(const std::string& session_id, const std::string& section_id);
    SectionDraft generate_section(const std::string& session_id, const std::string& section_id);
    /// The updated draft, or the accepted one for accept.
    SectionDraft submit_user_action(const std::string& session_id, const std::string& section_id,
                                    const UserAction& action);
    /// Retrieves and drafts every section still needing it, accepting each
    /// draft when `auto_accept`.
    Session draft_all_sections(const std::string& session_id, bool auto_accept);
    /// Markdown article with a per-section sources appendix. Throws
    /// SessionIncomplete unless every section is accepted.
    std::string export_markdown(const std::string& session_id);

    const PipelineOptions& options() const { return options_; }
    const PipelineDeps& deps() const { return deps_; }

private:
    struct Slot {
        std::mutex mutex;
        Session session;
    };

    std::shared_ptr<Slot> slot(const std::string& session_id);
    std::unique_lock<std::mutex> lock(Slot& slot);
    SessionEvent make_event(const Session& s, EventKind kind, TimestampMs at, std::int64_t latency_ms,
                            Json detail);
    void commit(Session& s, const SessionEvent& event);
    /// Validates the intervention event, stores the record, then commits
    /// the event carrying the record id.
    void commit_intervention(Session& s, SessionEvent event, ExperienceKind kind, ExperiencePayload payload,
                             std::string descriptor);

    SectionRetrieval retrieve_locked(Session& s, const std::string& section_id);
    SectionDraft generate_locked(Session& s, const std::string& section_id);
    SectionDraft accept_locked(Session& s, const std::string& section_id, TimestampMs at);
    FusedPrompt fused_locked(const Session& s, const OutlineSection& section);
    AgentConfig request_config(const std::string& tag, const std::string& user, std::int64_t& latency_ms);

    PipelineDeps deps_;
    PipelineOptions options_;
    SessionRepository repository_;
    mutable std::mutex slots_mutex_;
    std::map<std::string, std::shared_ptr<Slot>> slots_;
};

}  // namespace knowpilot
