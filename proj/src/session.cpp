#include "knowpilot/session.hpp"

#include <algorithm>
#include <set>

#include "knowpilot/errors.hpp"

namespace knowpilot {

bool event_allowed(SessionState state, EventKind kind) {
    switch (state) {
        case SessionState::new_: return kind == EventKind::priors_submitted;
        case SessionState::configured:
            return kind == EventKind::config_edited || kind == EventKind::outline_generated;
        case SessionState::outlined:
            return kind == EventKind::config_edited || kind == EventKind::outline_edited ||
                   kind == EventKind::section_retrieved;
        case SessionState::drafting:
            return kind != EventKind::priors_submitted && kind != EventKind::outline_generated;
        case SessionState::complete: return false;
    }
    return false;
}

std::optional<SectionStatus> required_section_status(EventKind kind) {
    switch (kind) {
        case EventKind::section_retrieved: return SectionStatus::pending;
        case EventKind::section_drafted: return SectionStatus::retrieved;
        case EventKind::section_edited:
        case EventKind::corrective_prompt:
        case EventKind::refinement:
        case EventKind::section_accepted: return SectionStatus::drafted;
        default: return std::nullopt;
    }
}

bool is_intervention(EventKind kind) {
    return kind == EventKind::config_edited || kind == EventKind::outline_edited ||
           kind == EventKind::section_edited || kind == EventKind::corrective_prompt ||
           kind == EventKind::refinement;
}

namespace {

[[noreturn]] void reject(const SessionEvent& event, const std::string& why) {
    throw IllegalTransition(to_string(event.kind) + " rejected: " + why);
}

template <typename T>
T detail_field(const SessionEvent& event, const char* name) {
    try {
        return event.detail.at(name).get<T>();
    } catch (const Json::exception& e) {
        throw ValidationError(to_string(event.kind) + " detail field '" + name + "': " + e.what());
    }
}

bool all_accepted(const Outline& outline) {
    return std::all_of(outline.sections.begin(), outline.sections.end(),
                       [](const OutlineSection& s) { return s.status == SectionStatus::accepted; });
}

void require_valid_config(const SessionEvent& event, const AgentConfig& config) {
    const auto violations = validate_config(config);
    if (!violations.empty()) throw ValidationError(to_string(event.kind) + ": invalid config: " + violations.front());
}

void require_valid_outline(const SessionEvent& event, const Outline& outline) {
    const auto violations = validate_outline(outline);
    if (!violations.empty()) throw ValidationError(to_string(event.kind) + ": invalid outline: " + violations.front());
}

void apply_draft_update(Session& s, const SessionEvent& event, const std::string& section_id) {
    auto& draft = s.drafts[section_id];
    const auto version = detail_field<std::int64_t>(event, "version");
    if (version != draft.version + 1)
        reject(event, "draft version " + std::to_string(version) + " does not follow " + std::to_string(draft.version));
    draft.section_id = section_id;
    draft.text = detail_field<std::string>(event, "text");
    draft.version = version;
    if (event.detail.contains("provenance")) draft.provenance = detail_field<std::vector<ProvenanceRef>>(event, "provenance");
}

}  // namespace

void apply_event(Session& session, const SessionEvent& event) {
    if (!event_allowed(session.state, event.kind)) reject(event, "not allowed in state " + to_string(session.state));
    if (!session.event_log.empty() && event.at < session.event_log.back().at) reject(event, "timestamp goes backwards");
    if (event.at < session.created_at) reject(event, "timestamp precedes session creation");
    if (event.wait_ms < 0 || event.latency_ms < 0) reject(event, "negative duration");

    Session next = session;
    OutlineSection* section = nullptr;
    std::string section_id;
    if (const auto required = required_section_status(event.kind)) {
        section_id = detail_field<std::string>(event, "section_id");
        section = next.outline ? next.outline->find(section_id) : nullptr;
        if (!section) reject(event, "unknown section " + section_id);
        if (section->status != *required)
            reject(event, "section " + section_id + " is " + to_string(section->status) + ", needs " +
                              to_string(*required));
    }

    switch (event.kind) {
        case EventKind::priors_submitted: {
            auto config = detail_field<AgentConfig>(event, "config");
            require_valid_config(event, config);
            next.brief = detail_field<std::string>(event, "brief");
            next.config = std::move(config);
            next.state = SessionState::configured;
            break;
        }
        case EventKind::config_edited: {
            auto config = detail_field<AgentConfig>(event, "config");
            require_valid_config(event, config);
            if (config.revision != next.config->revision + 1) reject(event, "config revision must increase by one");
            next.config = std::move(config);
            break;
        }
        case EventKind::outline_generated: {
            auto outline = detail_field<Outline>(event, "outline");
            require_valid_outline(event, outline);
            for (const auto& s : outline.sections)
                if (s.status != SectionStatus::pending) reject(event, "generated sections must be pending");
            next.outline = std::move(outline);
            next.state = SessionState::outlined;
            break;
        }
        case EventKind::outline_edited: {
            auto outline = detail_field<Outline>(event, "outline");
            require_valid_outline(event, outline);
            if (outline.revision != next.outline->revision + 1) reject(event, "outline revision must increase by one");
            std::set<std::string> kept;
            for (const auto& s : outline.sections) {
                kept.insert(s.id);
                const auto* before = next.outline->find(s.id);
                if (!before) {
                    if (s.status != SectionStatus::pending) reject(event, "added sections must be pending");
                    continue;
                }
                const bool same = s.status == before->status;
                const bool reset = before->status == SectionStatus::drafted && s.status == SectionStatus::retrieved;
                if (!same && !reset) reject(event, "outline edit cannot move section " + s.id + " to " + to_string(s.status));
            }
            std::erase_if(next.drafts, [&](const auto& entry) { return !kept.contains(entry.first); });
            std::erase_if(next.evidence, [&](const auto& entry) { return !kept.contains(entry.first); });
            next.outline = std::move(outline);
            if (next.state == SessionState::drafting && all_accepted(*next.outline)) next.state = SessionState::complete;
            break;
        }
        case EventKind::section_retrieved: {
            next.evidence[section_id] = detail_field<SectionEvidence>(event, "evidence");
            section->status = SectionStatus::retrieved;
            next.state = SessionState::drafting;
            break;
        }
        case EventKind::section_drafted: {
            apply_draft_update(next, event, section_id);
            section->status = SectionStatus::drafted;
            break;
        }
        case EventKind::section_edited:
        case EventKind::corrective_prompt:
        case EventKind::refinement: {
            apply_draft_update(next, event, section_id);
            break;
        }
        case EventKind::section_accepted: {
            section->status = SectionStatus::accepted;
            if (all_accepted(*next.outline)) next.state = SessionState::complete;
            break;
        }
    }

    next.clock_ms += event.wait_ms + event.latency_ms;
    next.event_log.push_back(event);
    session = std::move(next);
}

Session replay(const std::string& session_id, TimestampMs created_at, std::span<const SessionEvent> events) {
    Session session;
    session.session_id = session_id;
    session.created_at = created_at;
    for (const auto& event : events) apply_event(session, event);
    return session;
}

std::size_t intervention_count(const Session& session) {
    return static_cast<std::size_t>(std::count_if(session.event_log.begin(), session.event_log.end(),
                                                  [](const SessionEvent& e) { return is_intervention(e.kind); }));
}

TimestampMs resume_point(const Session& session) {
    if (session.event_log.empty()) return session.created_at;
    const auto& last = session.event_log.back();
    return last.at + last.latency_ms;
}

}  // namespace knowpilot
