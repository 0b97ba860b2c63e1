#include "knowpilot/pipeline.hpp"

#include <algorithm>
#include <regex>
#include <set>

#include <spdlog/spdlog.h>

#include "knowpilot/errors.hpp"
#include "knowpilot/session.hpp"

namespace knowpilot {

// ---------------------------------------------------------------------------
// Requests

namespace {

const std::set<std::string> kConfigFields = {"persona", "style", "structure_expectations", "target_domain"};

template <typename T>
T field_as(const Json& j, const char* name) {
    try {
        return j.at(name).get<T>();
    } catch (const Json::exception& e) {
        throw ValidationError(std::string("field '") + name + "': " + e.what());
    }
}

template <typename T>
std::optional<T> optional_field(const Json& j, const char* name) {
    if (!j.contains(name) || j.at(name).is_null()) return std::nullopt;
    return field_as<T>(j, name);
}

}  // namespace

ConfigChange ConfigChange::field(const std::string& name, const Json& value) {
    ConfigChange change;
    from_json(Json{{name, value}}, change);
    return change;
}

ConfigChange ConfigChange::from_instruction(std::string text) {
    ConfigChange change;
    change.instruction = std::move(text);
    return change;
}

void from_json(const Json& j, ConfigChange& v) {
    if (!j.is_object()) throw ValidationError("config change must be an object");
    v = {};
    if (j.contains("instruction")) {
        if (j.size() != 1) throw ValidationError("an instruction cannot be combined with field edits");
        v.instruction = field_as<std::string>(j, "instruction");
        return;
    }
    if (j.empty()) throw ValidationError("config change is empty");
    for (const auto& [key, _] : j.items())
        if (!kConfigFields.contains(key)) throw ValidationError("unknown config field '" + key + "'");
    v.persona = optional_field<std::string>(j, "persona");
    v.style = optional_field<std::string>(j, "style");
    v.target_domain = optional_field<std::string>(j, "target_domain");
    v.structure_expectations = optional_field<std::vector<std::string>>(j, "structure_expectations");
}

void to_json(Json& j, const ConfigChange& v) {
    j = Json::object();
    if (v.instruction) {
        j["instruction"] = *v.instruction;
        return;
    }
    if (v.persona) j["persona"] = *v.persona;
    if (v.style) j["style"] = *v.style;
    if (v.structure_expectations) j["structure_expectations"] = *v.structure_expectations;
    if (v.target_domain) j["target_domain"] = *v.target_domain;
}

OutlineCommand OutlineCommand::add(std::string heading, std::string intent_notes, std::optional<std::size_t> position) {
    OutlineCommand c;
    c.op = OutlineOp::add;
    c.heading = std::move(heading);
    c.intent_notes = std::move(intent_notes);
    c.position = position;
    return c;
}

OutlineCommand OutlineCommand::remove(std::string section_id) {
    OutlineCommand c;
    c.op = OutlineOp::remove;
    c.section_id = std::move(section_id);
    return c;
}

OutlineCommand OutlineCommand::move(std::string section_id, std::size_t position) {
    OutlineCommand c;
    c.op = OutlineOp::reorder;
    c.section_id = std::move(section_id);
    c.position = position;
    return c;
}

OutlineCommand OutlineCommand::reorder(std::vector<std::string> order) {
    OutlineCommand c;
    c.op = OutlineOp::reorder;
    c.order = std::move(order);
    return c;
}

OutlineCommand OutlineCommand::retitle(std::string section_id, std::string heading) {
    OutlineCommand c;
    c.op = OutlineOp::retitle;
    c.section_id = std::move(section_id);
    c.heading = std::move(heading);
    return c;
}

std::string to_string(OutlineOp op) {
    switch (op) {
        case OutlineOp::add: return "add";
        case OutlineOp::remove: return "remove";
        case OutlineOp::reorder: return "reorder";
        case OutlineOp::retitle: return "retitle";
    }
    return "unknown";
}

void from_json(const Json& j, OutlineCommand& v) {
    if (!j.is_object()) throw ValidationError("outline command must be an object");
    v = {};
    const auto op = field_as<std::string>(j, "op");
    if (op == "add") v.op = OutlineOp::add;
    else if (op == "remove") v.op = OutlineOp::remove;
    else if (op == "reorder") v.op = OutlineOp::reorder;
    else if (op == "retitle") v.op = OutlineOp::retitle;
    else throw ValidationError("unknown outline op '" + op + "'");
    v.section_id = optional_field<std::string>(j, "section_id").value_or("");
    v.heading = optional_field<std::string>(j, "heading").value_or("");
    v.intent_notes = optional_field<std::string>(j, "intent_notes");
    v.position = optional_field<std::size_t>(j, "position");
    v.order = optional_field<std::vector<std::string>>(j, "order").value_or(std::vector<std::string>{});
}

void to_json(Json& j, const OutlineCommand& v) {
    j = Json{{"op", to_string(v.op)}};
    if (!v.section_id.empty()) j["section_id"] = v.section_id;
    if (!v.heading.empty()) j["heading"] = v.heading;
    if (v.intent_notes) j["intent_notes"] = *v.intent_notes;
    if (v.position) j["position"] = *v.position;
    if (!v.order.empty()) j["order"] = v.order;
}

Outline apply_outline_command(const Outline& outline, const OutlineCommand& command) {
    Outline next = outline;
    auto& sections = next.sections;
    auto locate = [&](const std::string& id) {
        auto it = std::find_if(sections.begin(), sections.end(), [&](const OutlineSection& s) { return s.id == id; });
        if (it == sections.end()) throw UnknownSection("unknown section '" + id + "'");
        return it;
    };

    switch (command.op) {
        case OutlineOp::add: {
            if (trim(command.heading).empty()) throw ValidationError("new section needs a heading");
            const std::size_t position = command.position.value_or(sections.size());
            if (position > sections.size()) throw ValidationError("position out of range");
            std::size_t n = 0;
            std::set<std::string> taken;
            for (const auto& s : sections) {
                taken.insert(s.id);
                if (s.id.rfind("sec-", 0) == 0) {
                    try {
                        n = std::max<std::size_t>(n, std::stoul(s.id.substr(4)));
                    } catch (const std::exception&) {
                    }
                }
            }
            std::string id;
            do id = "sec-" + std::to_string(++n);
            while (taken.contains(id));
            OutlineSection added{id, trim(command.heading), trim(command.intent_notes.value_or("")), SectionStatus::pending};
            sections.insert(sections.begin() + static_cast<std::ptrdiff_t>(position), std::move(added));
            break;
        }
        case OutlineOp::remove: {
            auto it = locate(command.section_id);
            if (sections.size() == 1) throw PreconditionViolation("an outline must keep at least one section");
            sections.erase(it);
            break;
        }
        case OutlineOp::reorder: {
            if (!command.order.empty()) {
                std::vector<OutlineSection> reordered;
                std::set<std::string> seen;
                for (const auto& id : command.order) {
                    auto it = locate(id);
                    if (!seen.insert(id).second) throw ValidationError("section '" + id + "' listed twice");
                    reordered.push_back(*it);
                }
                if (reordered.size() != sections.size()) throw ValidationError("reorder must list every section");
                sections = std::move(reordered);
            } else {
                auto it = locate(command.section_id);
                if (!command.position || *command.position >= sections.size())
                    throw ValidationError("reorder needs a position within the outline");
                OutlineSection moved = *it;
                sections.erase(it);
                sections.insert(sections.begin() + static_cast<std::ptrdiff_t>(*command.position), std::move(moved));
            }
            break;
        }
        case OutlineOp::retitle: {
            auto it = locate(command.section_id);
            if (trim(command.heading).empty()) throw ValidationError("retitle needs a heading");
            it->heading = trim(command.heading);
            if (command.intent_notes) it->intent_notes = trim(*command.intent_notes);
            if (it->status == SectionStatus::drafted) it->status = SectionStatus::retrieved;
            break;
        }
    }
    ++next.revision;
    return next;
}

UserAction UserAction::direct_edit(std::string revised_text) {
    UserAction a;
    a.kind = ActionKind::direct_edit;
    a.revised_text = std::move(revised_text);
    return a;
}

UserAction UserAction::corrective(std::string instruction) {
    UserAction a;
    a.kind = ActionKind::corrective_prompt;
    a.instruction = std::move(instruction);
    return a;
}

UserAction UserAction::refine(std::string original_phrase, std::string revised_phrase) {
    UserAction a;
    a.kind = ActionKind::refinement;
    a.original_phrase = std::move(original_phrase);
    a.revised_phrase = std::move(revised_phrase);
    return a;
}

UserAction UserAction::accept() { return {}; }

std::string to_string(ActionKind kind) {
    switch (kind) {
        case ActionKind::direct_edit: return "direct_edit";
        case ActionKind::corrective_prompt: return "corrective_prompt";
        case ActionKind::refinement: return "refinement";
        case ActionKind::accept: return "accept";
    }
    return "unknown";
}

void from_json(const Json& j, UserAction& v) {
    if (!j.is_object()) throw ValidationError("action must be an object");
    v = {};
    const auto kind = field_as<std::string>(j, "kind");
    if (kind == "direct_edit") {
        v.kind = ActionKind::direct_edit;
        v.revised_text = field_as<std::string>(j, "revised_text");
    } else if (kind == "corrective_prompt") {
        v.kind = ActionKind::corrective_prompt;
        v.instruction = field_as<std::string>(j, "instruction");
    } else if (kind == "refinement") {
        v.kind = ActionKind::refinement;
        v.original_phrase = field_as<std::string>(j, "original_phrase");
        v.revised_phrase = field_as<std::string>(j, "revised_phrase");
    } else if (kind == "accept") {
        v.kind = ActionKind::accept;
    } else {
        throw ValidationError("unknown action kind '" + kind + "'");
    }
}

void to_json(Json& j, const UserAction& v) {
    j = Json{{"kind", to_string(v.kind)}};
    switch (v.kind) {
        case ActionKind::direct_edit: j["revised_text"] = v.revised_text; break;
        case ActionKind::corrective_prompt: j["instruction"] = v.instruction; break;
        case ActionKind::refinement:
            j["original_phrase"] = v.original_phrase;
            j["revised_phrase"] = v.revised_phrase;
            break;
        case ActionKind::accept: break;
    }
}

// ---------------------------------------------------------------------------
// Persistence

SessionRepository::SessionRepository(std::filesystem::path root) : root_(std::move(root)) {
    if (persistent()) std::filesystem::create_directories(root_);
}

std::filesystem::path SessionRepository::session_dir(const std::string& session_id) const {
    if (session_id.empty() || session_id.find_first_of("/\\.") != std::string::npos)
        throw ValidationError("malformed session id");
    return root_ / session_id;
}

void SessionRepository::create(const Session& session) {
    if (!persistent()) return;
    const auto dir = session_dir(session.session_id);
    std::filesystem::create_directories(dir / "drafts");
    write_file_atomic(dir / "session.json",
                      Json{{"session_id", session.session_id}, {"created_at", session.created_at}}.dump() + "\n");
}

void SessionRepository::append(const std::string& session_id, const SessionEvent& event) {
    if (!persistent()) return;
    append_jsonl(session_dir(session_id) / "events.jsonl", Json(event));
}

void SessionRepository::write_snapshots(const Session& session) {
    if (!persistent()) return;
    const auto dir = session_dir(session.session_id);
    if (session.config) write_file_atomic(dir / "config.json", Json(*session.config).dump(2) + "\n");
    if (session.outline) write_file_atomic(dir / "outline.json", Json(*session.outline).dump(2) + "\n");
    const auto drafts = dir / "drafts";
    std::filesystem::create_directories(drafts);
    for (const auto& entry : std::filesystem::directory_iterator(drafts)) {
        const auto stem = entry.path().stem().string();
        if (entry.path().extension() == ".md" && !session.drafts.contains(stem)) std::filesystem::remove(entry.path());
    }
    for (const auto& [id, draft] : session.drafts) {
        const auto path = drafts / (id + ".md");
        std::error_code ec;
        if (std::filesystem::exists(path, ec) && read_file(path) == draft.text) continue;
        write_file_atomic(path, draft.text);
    }
}

bool SessionRepository::exists(const std::string& session_id) const {
    if (!persistent()) return false;
    try {
        return std::filesystem::is_regular_file(session_dir(session_id) / "session.json");
    } catch (const ValidationError&) {
        return false;
    }
}

Session SessionRepository::load(const std::string& session_id) const {
    if (!exists(session_id)) throw NotFound("unknown session '" + session_id + "'");
    const auto dir = session_dir(session_id);
    try {
        const auto meta = Json::parse(read_file(dir / "session.json"));
        std::vector<SessionEvent> events;
        for (const auto& line : read_jsonl(dir / "events.jsonl")) events.push_back(line.get<SessionEvent>());
        return replay(meta.at("session_id").get<std::string>(), meta.at("created_at").get<TimestampMs>(), events);
    } catch (const std::exception& e) {
        throw StoreCorrupted("session " + session_id + ": " + e.what());
    }
}

std::vector<std::string> SessionRepository::list() const {
    std::vector<std::string> out;
    if (!persistent()) return out;
    for (const auto& entry : std::filesystem::directory_iterator(root_))
        if (entry.is_directory() && std::filesystem::is_regular_file(entry.path() / "session.json"))
            out.push_back(entry.path().filename().string());
    std::sort(out.begin(), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// Reply parsing

namespace {

std::string strip_markup(std::string_view text) {
    std::string out;
    for (char c : text)
        if (c != '*' && c != '`') out += c;
    out = trim(out);
    while (!out.empty() && out.front() == '#') out = trim(std::string_view(out).substr(1));
    return out;
}

std::vector<std::string> lines_of(std::string_view text) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        out.emplace_back(text.substr(start, end - start));
        start = end + 1;
    }
    return out;
}

}  // namespace

std::optional<AgentConfig> parse_config_reply(std::string_view text) {
    const auto open = text.find('{');
    const auto close = text.rfind('}');
    if (open == std::string_view::npos || close == std::string_view::npos || close < open) return std::nullopt;
    const auto j = Json::parse(text.substr(open, close - open + 1), nullptr, false);
    if (j.is_discarded() || !j.is_object()) return std::nullopt;
    AgentConfig config;
    auto string_field = [&](const char* name) -> std::optional<std::string> {
        if (!j.contains(name)) return std::string();
        if (!j[name].is_string()) return std::nullopt;
        return trim(j[name].get<std::string>());
    };
    const auto persona = string_field("persona");
    const auto style = string_field("style");
    const auto domain = string_field("target_domain");
    if (!persona || !style || !domain || persona->empty() || style->empty()) return std::nullopt;
    config.persona = *persona;
    config.style = *style;
    config.target_domain = *domain;
    if (j.contains("structure_expectations")) {
        const auto& s = j["structure_expectations"];
        if (s.is_string()) {
            if (!trim(s.get<std::string>()).empty()) config.structure_expectations.push_back(trim(s.get<std::string>()));
        } else if (s.is_array()) {
            for (const auto& item : s) {
                if (!item.is_string()) return std::nullopt;
                if (!trim(item.get<std::string>()).empty()) config.structure_expectations.push_back(trim(item.get<std::string>()));
            }
        } else if (!s.is_null()) {
            return std::nullopt;
        }
    }
    return config;
}

std::optional<Outline> parse_outline_reply(std::string_view text, std::string_view fallback_title) {
    static const std::regex title_re(R"(^\s*#*\s*\**\s*title\s*\**\s*:\s*(.+)$)", std::regex::icase);
    static const std::regex item_re(R"(^\s*\**\s*(\d+)\s*[.)]\s+(.+)$)");
    Outline outline;
    for (const auto& raw : lines_of(text)) {
        std::smatch m;
        if (outline.title.empty() && outline.sections.empty() && std::regex_match(raw, m, title_re)) {
            outline.title = strip_markup(m[1].str());
            continue;
        }
        if (!std::regex_match(raw, m, item_re)) continue;
        std::string body = m[2].str();
        std::string heading = body;
        std::string intent;
        if (const auto sep = body.find("::"); sep != std::string::npos) {
            heading = body.substr(0, sep);
            intent = body.substr(sep + 2);
        }
        heading = strip_markup(heading);
        if (heading.empty()) continue;
        outline.sections.push_back({"sec-" + std::to_string(outline.sections.size() + 1), heading,
                                    strip_markup(intent), SectionStatus::pending});
    }
    if (outline.sections.empty()) return std::nullopt;
    if (outline.title.empty()) outline.title = normalize_whitespace(fallback_title);
    outline.revision = 1;
    return outline;
}

std::vector<std::string> parse_keyword_reply(std::string_view text) {
    static const std::regex marker_re(R"(^\s*(?:[-*•]|\d+\s*[.)])\s*)");
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& raw : lines_of(text)) {
        std::string line = std::regex_replace(raw, marker_re, "", std::regex_constants::format_first_only);
        line = trim(line);
        if (line.size() >= 2 && line.front() == '"' && line.back() == '"') line = trim(line.substr(1, line.size() - 2));
        if (line.empty()) continue;
        if (seen.insert(to_lower_ascii(line)).second) out.push_back(line);
    }
    return out;
}

std::string describe_config(const AgentConfig& config) {
    return "persona: " + config.persona + "\nstyle: " + config.style + "\ntarget domain: " + config.target_domain +
           "\nstructure: " + join(config.structure_expectations, "; ");
}

std::string describe_outline(const Outline& outline) {
    std::string out;
    for (std::size_t i = 0; i < outline.sections.size(); ++i)
        out += std::to_string(i + 1) + ". " + outline.sections[i].heading + "\n";
    if (!out.empty()) out.pop_back();
    return out;
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

std::string render_experience_list(const std::vector<ScoredRecord>& records) {
    std::string out;
    for (const auto& r : records) out += "- " + render_guidance(r.record) + "\n";
    if (out.empty()) return "(none)";
    out.pop_back();
    return out;
}

std::map<std::string, std::string> persona_bindings(const AgentConfig& config) {
    return {{"persona", config.persona},
            {"target_domain", config.target_domain.empty() ? "general" : config.target_domain},
            {"style", config.style},
            {"structure", render_structure(config)}};
}

Json record_ids(const std::vector<ScoredRecord>& records) {
    Json ids = Json::array();
    for (const auto& r : records) ids.push_back(r.record.record_id);
    return ids;
}

void require_state(const Session& s, std::initializer_list<SessionState> allowed, const std::string& op) {
    if (std::find(allowed.begin(), allowed.end(), s.state) != allowed.end()) return;
    throw PreconditionViolation(op + " is not allowed while the session is " + to_string(s.state));
}

const OutlineSection& require_section(const Session& s, const std::string& section_id, SectionStatus status,
                                      const std::string& op) {
    const OutlineSection* section = s.outline ? s.outline->find(section_id) : nullptr;
    if (!section) throw UnknownSection("unknown section '" + section_id + "'");
    if (section->status != status)
        throw PreconditionViolation(op + " needs section " + section_id + " to be " + to_string(status) + ", it is " +
                                    to_string(section->status));
    return *section;
}

std::string context_descriptor(const Session& s, const std::string& subject) {
    const std::string persona = s.config ? s.config->persona : std::string();
    return trim(persona + " " + subject);
}

}  // namespace

Pipeline::Pipeline(PipelineDeps deps, PipelineOptions options)
    : deps_(std::move(deps)), options_(std::move(options)), repository_(deps_.sessions_dir) {
    if (!deps_.gateway || !deps_.knowledge || !deps_.search || !deps_.experience)
        throw PreconditionViolation("pipeline needs a gateway, knowledge store, search provider and experience store");
    if (!deps_.runtime.clock || !deps_.runtime.ids) throw PreconditionViolation("pipeline needs a runtime");
    if (options_.top_k < 1 || options_.search_limit < 1 || options_.experience_limit < 1 || options_.keyword_queries < 0)
        throw PreconditionViolation("pipeline limits must be positive");
}

Session Pipeline::create_session() {
    Session s;
    s.session_id = deps_.runtime.ids->next();
    s.created_at = deps_.runtime.clock->now_ms();
    repository_.create(s);
    auto slot = std::make_shared<Slot>();
    slot->session = s;
    std::lock_guard guard(slots_mutex_);
    slots_.emplace(s.session_id, std::move(slot));
    return s;
}

std::shared_ptr<Pipeline::Slot> Pipeline::slot(const std::string& session_id) {
    std::lock_guard guard(slots_mutex_);
    if (auto it = slots_.find(session_id); it != slots_.end()) return it->second;
    if (!repository_.exists(session_id)) throw NotFound("unknown session '" + session_id + "'");
    auto slot = std::make_shared<Slot>();
    slot->session = repository_.load(session_id);
    slots_.emplace(session_id, slot);
    return slot;
}

std::unique_lock<std::mutex> Pipeline::lock(Slot& slot) {
    std::unique_lock guard(slot.mutex, std::defer_lock);
    if (!options_.fail_fast_when_busy) {
        guard.lock();
    } else if (!guard.try_lock()) {
        throw SessionBusy("session " + slot.session.session_id + " is busy");
    }
    return guard;
}

Session Pipeline::session(const std::string& session_id) {
    auto s = slot(session_id);
    std::lock_guard guard(s->mutex);
    return s->session;
}

std::vector<std::string> Pipeline::session_ids() const {
    std::set<std::string> ids;
    for (const auto& id : repository_.list()) ids.insert(id);
    std::lock_guard guard(slots_mutex_);
    for (const auto& [id, _] : slots_) ids.insert(id);
    return {ids.begin(), ids.end()};
}

SessionEvent Pipeline::make_event(const Session& s, EventKind kind, TimestampMs at, std::int64_t latency_ms,
                                  Json detail) {
    SessionEvent event;
    event.event_id = deps_.runtime.ids->next();
    event.kind = kind;
    event.at = std::max(at, s.event_log.empty() ? s.created_at : s.event_log.back().at);
    event.wait_ms = std::max<std::int64_t>(0, at - resume_point(s));
    event.latency_ms = latency_ms;
    event.detail = std::move(detail);
    return event;
}

void Pipeline::commit(Session& s, const SessionEvent& event) {
    Session next = s;
    apply_event(next, event);
    repository_.append(s.session_id, event);
    s = std::move(next);
    try {
        repository_.write_snapshots(s);
    } catch (const std::exception& e) {
        // The event log is authoritative; snapshots are rebuilt on the next commit.
        spdlog::warn("session {}: snapshot write failed: {}", s.session_id, e.what());
    }
}

void Pipeline::commit_intervention(Session& s, SessionEvent event, ExperienceKind kind, ExperiencePayload payload,
                                   std::string descriptor) {
    validate_payload(kind, payload);
    {
        Session probe = s;
        apply_event(probe, event);
    }
    const auto record = deps_.experience->record(kind, std::move(payload), std::move(descriptor), s.session_id);
    event.detail["experience_record_id"] = record.record_id;
    commit(s, event);
}

AgentConfig Pipeline::request_config(const std::string& tag, const std::string& user, std::int64_t& latency_ms) {
    ChatRequest request;
    request.request_tag = tag;
    request.temperature = kParsingTemperature;
    request.messages = {{"system", deps_.templates.render("priors_system", {})}, {"user", user}};
    auto reply = deps_.gateway->complete(request);
    latency_ms += reply.latency_ms;
    if (auto config = parse_config_reply(reply.text)) return *config;

    spdlog::info("{}: unparseable config reply, asking for a reformat", tag);
    request.messages.push_back({"assistant", reply.text.empty() ? "(empty)" : reply.text});
    request.messages.push_back({"user", deps_.templates.render("reformat", {})});
    reply = deps_.gateway->complete(request);
    latency_ms += reply.latency_ms;
    if (auto config = parse_config_reply(reply.text)) return *config;
    throw ConfigParseFailure("model reply did not contain a valid configuration after one reformat request");
}

AgentConfig Pipeline::parse_priors(const std::string& session_id, const std::string& brief) {
    auto sl = slot(session_id);
    auto guard = lock(*sl);
    Session& s = sl->session;
    const auto t = deps_.runtime.clock->now_ms();
    require_state(s, {SessionState::new_}, "parse_priors");
    if (trim(brief).empty()) throw PreconditionViolation("brief is empty");

    const auto experience = deps_.experience->retrieve_relevant(brief, options_.experience_limit);
    const auto user = deps_.templates.render(
        "priors_user", {{"brief", trim(brief)}, {"experience", render_experience_list(experience)}});
    std::int64_t latency = 0;
    auto config = request_config(tags::kParsePriors, user, latency);
    config.created_at = t;
    config.revision = 1;
    commit(s, make_event(s, EventKind::priors_submitted, t, latency,
                         {{"brief", trim(brief)}, {"config", config}, {"experience", record_ids(experience)}}));
    return config;
}

AgentConfig Pipeline::edit_config(const std::string& session_id, const ConfigChange& change) {
    auto sl = slot(session_id);
    auto guard = lock(*sl);
    Session& s = sl->session;
    const auto t = deps_.runtime.clock->now_ms();
    require_state(s, {SessionState::configured, SessionState::outlined, SessionState::drafting}, "edit_config");

    const AgentConfig before = *s.config;
    AgentConfig after = before;
    std::int64_t latency = 0;
    ExperienceKind kind;
    ExperiencePayload payload;
    Json detail;
    if (change.is_instruction()) {
        const auto instruction = trim(*change.instruction);
        if (instruction.empty()) throw ValidationError("config instruction is empty");
        Json current{{"persona", before.persona},
                     {"style", before.style},
                     {"structure_expectations", before.structure_expectations},
                     {"target_domain", before.target_domain}};
        const auto user = deps_.templates.render("config_instruction",
                                                 {{"config_json", current.dump(2)}, {"instruction", instruction}});
        after = request_config(tags::kEditConfig, user, latency);
        kind = ExperienceKind::corrective_prompt;
        payload = CorrectivePromptPayload{instruction, describe_config(before), describe_config(after)};
        detail = {{"change", "instruction"}, {"instruction", instruction}};
    } else {
        if (change.persona) after.persona = trim(*change.persona);
        if (change.style) after.style = trim(*change.style);
        if (change.target_domain) after.target_domain = trim(*change.target_domain);
        if (change.structure_expectations) after.structure_expectations = *change.structure_expectations;
        if (describe_config(after) == describe_config(before)) throw ValidationError("config edit changes nothing");
        kind = ExperienceKind::direct_edit;
        payload = make_direct_edit(describe_config(before), describe_config(after));
        detail = {{"change", "fields"}, {"fields", Json(change)}};
    }
    after.created_at = t;
    after.revision = before.revision + 1;
    if (const auto violations = validate_config(after); !violations.empty())
        throw ValidationError("edited config is invalid: " + violations.front());
    detail["config"] = after;
    commit_intervention(s, make_event(s, EventKind::config_edited, t, latency, std::move(detail)), kind,
                        std::move(payload), context_descriptor(s, s.brief));
    return after;
}

Outline Pipeline::generate_outline(const std::string& session_id) {
    auto sl = slot(session_id);
    auto guard = lock(*sl);
    Session& s = sl->session;
    const auto t = deps_.runtime.clock->now_ms();
    require_state(s, {SessionState::configured}, "generate_outline");

    const auto experience =
        deps_.experience->retrieve_relevant(context_descriptor(s, s.brief), options_.experience_limit);
    ChatRequest request;
    request.request_tag = tags::kOutline;
    request.temperature = kGenerationTemperature;
    request.messages = {
        {"system", deps_.templates.render("outline_system", persona_bindings(*s.config))},
        {"user", deps_.templates.render("outline_user",
                                        {{"brief", s.brief}, {"experience", render_experience_list(experience)}})}};
    auto reply = deps_.gateway->complete(request);
    std::int64_t latency = reply.latency_ms;
    auto outline = parse_outline_reply(reply.text, s.brief);
    if (!outline) {
        spdlog::info("outline: unparseable reply, asking for a reformat");
        request.messages.push_back({"assistant", reply.text.empty() ? "(empty)" : reply.text});
        request.messages.push_back({"user", deps_.templates.render("reformat", {})});
        reply = deps_.gateway->complete(request);
        latency += reply.latency_ms;
        outline = parse_outline_reply(reply.text, s.brief);
    }
    if (!outline) throw OutlineParseFailure("model reply held no outline sections after one reformat request");
    commit(s, make_event(s, EventKind::outline_generated, t, latency,
                         {{"outline", *outline}, {"experience", record_ids(experience)}}));
    return *outline;
}

Outline Pipeline::edit_outline(const std::string& session_id, const OutlineCommand& command) {
    auto sl = slot(session_id);
    auto guard = lock(*sl);
    Session& s = sl->session;
    const auto t = deps_.runtime.clock->now_ms();
    require_state(s, {SessionState::outlined, SessionState::drafting}, "edit_outline");

    const Outline before = *s.outline;
    Outline after = apply_outline_command(before, command);
    auto payload = make_direct_edit(describe_outline(before), describe_outline(after));
    commit_intervention(s,
                        make_event(s, EventKind::outline_edited, t, 0, {{"command", command}, {"outline", after}}),
                        ExperienceKind::direct_edit, std::move(payload), context_descriptor(s, s.brief));
    return after;
}

SectionRetrieval Pipeline::retrieve_for_section(const std::string& session_id, const std::string& section_id) {
    auto sl = slot(session_id);
    auto guard = lock(*sl);
    return retrieve_locked(sl->session, section_id);
}

SectionRetrieval Pipeline::retrieve_locked(Session& s, const std::string& section_id) {
    const auto t = deps_.runtime.clock->now_ms();
    require_state(s, {SessionState::outlined, SessionState::drafting}, "retrieve_for_section");
    const OutlineSection section = require_section(s, section_id, SectionStatus::pending, "retrieve_for_section");

    std::vector<std::string> queries{section.heading};
    std::int64_t latency = 0;
    if (options_.keyword_queries > 0) {
        const auto user = deps_.templates.render("keywords", {{"title", s.outline->title},
                                                              {"heading", section.heading},
                                                              {"intent_notes", section.intent_notes.empty() ? "(none)" : section.intent_notes},
                                                              {"count", std::to_string(options_.keyword_queries)}});
        const auto reply = deps_.gateway->complete(
            tags::kKeywords, deps_.templates.render("section_system", persona_bindings(*s.config)), user,
            kParsingTemperature);
        latency += reply.latency_ms;
        int added = 0;
        for (const auto& q : parse_keyword_reply(reply.text)) {
            if (added == options_.keyword_queries) break;
            const bool duplicate = std::any_of(queries.begin(), queries.end(), [&](const std::string& existing) {
                return to_lower_ascii(existing) == to_lower_ascii(q);
            });
            if (duplicate) continue;
            queries.push_back(q);
            ++added;
        }
    }

    SectionRetrieval out;
    // Private: best score per chunk across queries.
    std::map<std::string, RetrievalResult> best;
    for (const auto& q : queries) {
        for (auto& r : deps_.knowledge->retrieve_top_k(q, options_.top_k)) {
            auto [it, inserted] = best.try_emplace(r.chunk.chunk_id, r);
            if (!inserted && r.score > it->second.score) it->second = std::move(r);
        }
    }
    for (auto& [_, r] : best) out.private_results.push_back(std::move(r));
    std::sort(out.private_results.begin(), out.private_results.end(),
              [](const RetrievalResult& a, const RetrievalResult& b) {
                  return ranks_before({a.chunk.chunk_id, a.score}, {b.chunk.chunk_id, b.score});
              });
    if (out.private_results.size() > static_cast<std::size_t>(options_.top_k))
        out.private_results.resize(static_cast<std::size_t>(options_.top_k));
    for (std::size_t i = 0; i < out.private_results.size(); ++i) out.private_results[i].rank = static_cast<int>(i + 1);

    // Open: per-query lists interleaved by rank, first occurrence of a url wins.
    std::vector<std::vector<WebResult>> per_query;
    for (const auto& q : queries) {
        try {
            per_query.push_back(deps_.search->search(q, options_.search_limit));
        } catch (const SearchUnavailable& e) {
            spdlog::warn("search degraded for '{}': {}", q, e.what());
            out.search_degraded = true;
        }
    }
    std::set<std::string> urls;
    for (std::size_t depth = 0; out.web.size() < static_cast<std::size_t>(options_.search_limit); ++depth) {
        bool any = false;
        for (const auto& list : per_query) {
            if (depth >= list.size()) continue;
            any = true;
            if (out.web.size() < static_cast<std::size_t>(options_.search_limit) && urls.insert(list[depth].url).second)
                out.web.push_back(list[depth]);
        }
        if (!any) break;
    }
    for (std::size_t i = 0; i < out.web.size(); ++i) out.web[i].rank = static_cast<int>(i + 1);

    out.experience = deps_.experience->retrieve_relevant(context_descriptor(s, section.heading), options_.experience_limit);

    SectionEvidence evidence;
    evidence.queries = queries;
    for (const auto& r : out.private_results) evidence.private_hits.push_back({r.chunk.chunk_id, r.score, r.rank});
    evidence.web = out.web;
    for (const auto& r : out.experience) evidence.experience.push_back({r.record.record_id, r.score});
    evidence.search_degraded = out.search_degraded;
    commit(s, make_event(s, EventKind::section_retrieved, t, latency, {{"section_id", section_id}, {"evidence", evidence}}));
    return out;
}

FusedPrompt Pipeline::fused_locked(const Session& s, const OutlineSection& section) {
    const auto it = s.evidence.find(section.id);
    if (it == s.evidence.end()) throw PreconditionViolation("section " + section.id + " has no retrieved evidence");
    const auto& evidence = it->second;
    std::vector<RetrievalResult> retrievals;
    for (const auto& hit : evidence.private_hits) {
        if (auto chunk = deps_.knowledge->chunk(hit.chunk_id))
            retrievals.push_back({std::move(*chunk), hit.score, hit.rank});
        else
            spdlog::warn("section {}: chunk {} no longer in the knowledge store", section.id, hit.chunk_id);
    }
    std::vector<ScoredRecord> experience;
    for (const auto& hit : evidence.experience) {
        if (auto record = deps_.experience->get(hit.record_id))
            experience.push_back({std::move(*record), hit.score});
        else
            spdlog::warn("section {}: experience record {} not found", section.id, hit.record_id);
    }
    return assemble_fused_prompt(*s.config, *s.outline, section, retrievals, evidence.web, experience,
                                 deps_.templates, options_.token_budget);
}

FusedPrompt Pipeline::fused_prompt(const std::string& session_id, const std::string& section_id) {
    auto sl = slot(session_id);
    auto guard = lock(*sl);
    const Session& s = sl->session;
    const OutlineSection* section = s.outline ? s.outline->find(section_id) : nullptr;
    if (!section) throw UnknownSection("unknown section '" + section_id + "'");
    return fused_locked(s, *section);
}

SectionDraft Pipeline::generate_section(const std::string& session_id, const std::string& section_id) {
    auto sl = slot(session_id);
    auto guard = lock(*sl);
    return generate_locked(sl->session, section_id);
}

SectionDraft Pipeline::generate_locked(Session& s, const std::string& section_id) {
    const auto t = deps_.runtime.clock->now_ms();
    require_state(s, {SessionState::drafting}, "generate_section");
    const OutlineSection section = require_section(s, section_id, SectionStatus::retrieved, "generate_section");

    const auto prompt = fused_locked(s, section);
    if (options_.on_fused_prompt) options_.on_fused_prompt(s.session_id, section_id, prompt);
    const auto reply = deps_.gateway->complete(tags::kSection, prompt.system_text, prompt.user_text, kGenerationTemperature);
    const auto text = trim(reply.text);
    if (text.empty()) throw ProtocolError("model returned an empty section draft");

    const auto previous = s.drafts.find(section_id);
    const std::int64_t version = previous == s.drafts.end() ? 1 : previous->second.version + 1;
    commit(s, make_event(s, EventKind::section_drafted, t, reply.latency_ms,
                         {{"section_id", section_id},
                          {"text", text},
                          {"version", version},
                          {"provenance", prompt.included},
                          {"token_estimate", prompt.token_estimate}}));
    return s.drafts.at(section_id);
}

SectionDraft Pipeline::accept_locked(Session& s, const std::string& section_id, TimestampMs at) {
    require_section(s, section_id, SectionStatus::drafted, "accept");
    commit(s, make_event(s, EventKind::section_accepted, at, 0, {{"section_id", section_id}}));
    return s.drafts.at(section_id);
}

SectionDraft Pipeline::submit_user_action(const std::string& session_id, const std::string& section_id,
                                          const UserAction& action) {
    auto sl = slot(session_id);
    auto guard = lock(*sl);
    Session& s = sl->session;
    const auto t = deps_.runtime.clock->now_ms();
    require_state(s, {SessionState::drafting}, "submit_user_action");
    const OutlineSection section = require_section(s, section_id, SectionStatus::drafted, to_string(action.kind));
    const SectionDraft current = s.drafts.at(section_id);
    const auto descriptor = context_descriptor(s, section.heading);
    Json detail{{"section_id", section_id}, {"version", current.version + 1}};

    switch (action.kind) {
        case ActionKind::accept: return accept_locked(s, section_id, t);
        case ActionKind::direct_edit: {
            const auto revised = trim(action.revised_text);
            if (revised.empty()) throw ValidationError("revised text is empty");
            detail["text"] = revised;
            detail["provenance"] = current.provenance;
            commit_intervention(s, make_event(s, EventKind::section_edited, t, 0, std::move(detail)),
                                ExperienceKind::direct_edit, make_direct_edit(current.text, revised), descriptor);
            break;
        }
        case ActionKind::corrective_prompt: {
            const auto instruction = trim(action.instruction);
            if (instruction.empty()) throw ValidationError("corrective instruction is empty");
            const auto prompt = fused_locked(s, section);
            ChatRequest request;
            request.request_tag = tags::kCorrective;
            request.temperature = kGenerationTemperature;
            request.messages = {{"system", prompt.system_text},
                                {"user", prompt.user_text},
                                {"assistant", current.text},
                                {"user", deps_.templates.render("corrective", {{"instruction", instruction}})}};
            const auto reply = deps_.gateway->complete(request);
            const auto revised = trim(reply.text);
            if (revised.empty()) throw ProtocolError("model returned an empty revision");
            detail["text"] = revised;
            detail["provenance"] = prompt.included;
            detail["instruction"] = instruction;
            commit_intervention(s, make_event(s, EventKind::corrective_prompt, t, reply.latency_ms, std::move(detail)),
                                ExperienceKind::corrective_prompt,
                                CorrectivePromptPayload{instruction, current.text, revised}, descriptor);
            break;
        }
        case ActionKind::refinement: {
            if (action.original_phrase.empty()) throw ValidationError("refinement needs an original phrase");
            if (action.original_phrase == action.revised_phrase)
                throw ValidationError("refinement phrases are identical");
            if (current.text.find(action.original_phrase) == std::string::npos)
                throw PhraseNotFound("phrase '" + action.original_phrase + "' does not occur in the draft");
            std::string revised;
            std::size_t pos = 0;
            for (std::size_t hit; (hit = current.text.find(action.original_phrase, pos)) != std::string::npos;
                 pos = hit + action.original_phrase.size())
                revised.append(current.text, pos, hit - pos).append(action.revised_phrase);
            revised.append(current.text, pos);
            detail["text"] = revised;
            detail["provenance"] = current.provenance;
            detail["original_phrase"] = action.original_phrase;
            detail["revised_phrase"] = action.revised_phrase;
            commit_intervention(s, make_event(s, EventKind::refinement, t, 0, std::move(detail)),
                                ExperienceKind::refinement,
                                RefinementPayload{action.original_phrase, action.revised_phrase}, descriptor);
            break;
        }
    }
    return s.drafts.at(section_id);
}

Session Pipeline::draft_all_sections(const std::string& session_id, bool auto_accept) {
    auto sl = slot(session_id);
    auto guard = lock(*sl);
    Session& s = sl->session;
    if (s.state == SessionState::complete) return s;
    require_state(s, {SessionState::outlined, SessionState::drafting}, "draft_all_sections");
    std::vector<std::string> ids;
    for (const auto& section : s.outline->sections) ids.push_back(section.id);
    for (const auto& id : ids) {
        if (s.outline->find(id)->status == SectionStatus::pending) retrieve_locked(s, id);
        if (s.outline->find(id)->status == SectionStatus::retrieved) generate_locked(s, id);
        if (auto_accept && s.outline->find(id)->status == SectionStatus::drafted)
            accept_locked(s, id, deps_.runtime.clock->now_ms());
    }
    return s;
}

std::string Pipeline::export_markdown(const std::string& session_id) {
    const Session s = session(session_id);
    if (s.state != SessionState::complete)
        throw SessionIncomplete("session " + session_id + " is " + to_string(s.state) +
                                "; accept every section before exporting");
    std::string out = "# " + s.outline->title + "\n";
    for (const auto& section : s.outline->sections) {
        out += "\n## " + section.heading + "\n\n" + s.drafts.at(section.id).text + "\n";
    }
    // Provenance appendix, one list per section.
    out += "\n---\n\n## Sources\n";
    for (const auto& section : s.outline->sections) {
        out += "\n### " + section.heading + "\n\n";
        const auto& refs = s.drafts.at(section.id).provenance;
        if (refs.empty()) out += "- none\n";
        for (const auto& ref : refs) out += "- " + to_string(ref.source) + ": " + ref.id + "\n";
    }
    return out;
}

}  // namespace knowpilot
