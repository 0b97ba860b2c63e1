#include "knowpilot/fusion.hpp"

#include <algorithm>
#include <cstdio>

#include "knowpilot/errors.hpp"

namespace knowpilot {

namespace detail {
extern const char* const kBuiltinTemplates[][2];
extern const std::size_t kBuiltinTemplateCount;
}  // namespace detail

TemplateSet::TemplateSet() {
    for (std::size_t i = 0; i < detail::kBuiltinTemplateCount; ++i) {
        const auto* entry = detail::kBuiltinTemplates[i];
        set(PromptTemplate(entry[0], entry[1]));
    }
}

TemplateSet TemplateSet::builtin() { return TemplateSet(); }

TemplateSet TemplateSet::with_overrides(const std::filesystem::path& directory) {
    if (!std::filesystem::is_directory(directory))
        throw NotFound("template directory " + directory.string() + " does not exist");
    TemplateSet set;
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(directory))
        if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& path : files) set.set(PromptTemplate(path.stem().string(), read_file(path)));
    return set;
}

const PromptTemplate& TemplateSet::get(const std::string& id) const {
    auto it = templates_.find(id);
    if (it == templates_.end()) throw NotFound("no prompt template '" + id + "'");
    return it->second;
}

std::string TemplateSet::render(const std::string& id, const std::map<std::string, std::string>& bindings) const {
    return render_prompt(get(id), bindings);
}

void TemplateSet::set(PromptTemplate prompt) {
    auto id = prompt.template_id();
    templates_.insert_or_assign(std::move(id), std::move(prompt));
}

std::vector<std::string> TemplateSet::ids() const {
    std::vector<std::string> out;
    for (const auto& [id, _] : templates_) out.push_back(id);
    return out;
}

// ---------------------------------------------------------------------------

std::string to_string(PromptSource source) {
    switch (source) {
        case PromptSource::prior: return "prior";
        case PromptSource::explicit_private: return "explicit_private";
        case PromptSource::explicit_open: return "explicit_open";
        case PromptSource::experiential: return "experiential";
    }
    return "unknown";
}

void to_json(Json& j, const FusedPrompt& v) {
    Json provenance = Json::array();
    for (auto s : v.provenance) provenance.push_back(to_string(s));
    j = Json{{"system_text", v.system_text}, {"user_text", v.user_text},       {"provenance", provenance},
             {"token_estimate", v.token_estimate}, {"included", v.included}, {"dropped", v.dropped}};
}

std::size_t estimate_tokens(std::size_t chars) { return (chars + kCharsPerToken - 1) / kCharsPerToken; }

double web_result_score(const WebResult& result) { return result.rank > 0 ? 1.0 / result.rank : 0.0; }

namespace {

constexpr std::size_t kGuidanceHunks = 3;
constexpr std::size_t kGuidanceFragmentTokens = 40;

std::string quote_fragment(const std::vector<std::string>& tokens) {
    if (tokens.size() <= kGuidanceFragmentTokens) return "\"" + join(tokens, " ") + "\"";
    std::vector<std::string> head(tokens.begin(), tokens.begin() + kGuidanceFragmentTokens);
    return "\"" + join(head, " ") + " ...\"";
}

std::string direct_edit_guidance(const DirectEditPayload& edit) {
    struct Hunk {
        std::vector<std::string> removed;
        std::vector<std::string> added;
    };
    std::vector<Hunk> hunks;
    bool open = false;
    for (const auto& op : edit.edit_script) {
        if (op.kind == EditKind::keep) {
            open = false;
            continue;
        }
        if (!open) hunks.emplace_back();
        open = true;
        auto& target = op.kind == EditKind::erase ? hunks.back().removed : hunks.back().added;
        target.insert(target.end(), op.tokens.begin(), op.tokens.end());
    }
    if (hunks.empty()) return "Keep the wording unchanged.";
    std::vector<std::string> parts;
    for (std::size_t i = 0; i < hunks.size() && i < kGuidanceHunks; ++i) {
        const auto& h = hunks[i];
        if (h.removed.empty())
            parts.push_back("Add " + quote_fragment(h.added));
        else if (h.added.empty())
            parts.push_back("Avoid " + quote_fragment(h.removed));
        else
            parts.push_back("Prefer " + quote_fragment(h.added) + " over " + quote_fragment(h.removed));
    }
    if (hunks.size() > kGuidanceHunks) parts.push_back("(" + std::to_string(hunks.size() - kGuidanceHunks) + " more edits)");
    return join(parts, "; ") + ".";
}

std::string format_score(double score) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", score);
    return buf;
}

std::string none_if_empty(std::string text) { return text.empty() ? "(none)" : text; }

struct EvidenceItem {
    PromptSource source;
    ProvenanceRef ref;
    double score;
    std::size_t position;  // index within its own source list
    std::string text;
    bool kept = true;
};

// Cuts `text` to at most `max_bytes` without splitting a UTF-8 sequence.
std::string clip_utf8(const std::string& text, std::size_t max_bytes) {
    if (text.size() <= max_bytes) return text;
    std::size_t cut = max_bytes;
    while (cut > 0 && (static_cast<unsigned char>(text[cut]) & 0xC0) == 0x80) --cut;
    return text.substr(0, cut);
}

}  // namespace

std::string render_guidance(const ExperienceRecord& record) {
    return std::visit(
        [](const auto& p) -> std::string {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, DirectEditPayload>) {
                return direct_edit_guidance(p);
            } else if constexpr (std::is_same_v<T, CorrectivePromptPayload>) {
                return "Standing instruction: " + trim(p.instruction);
            } else {
                return "Use \"" + p.revised_phrase + "\" instead of \"" + p.original_phrase + "\".";
            }
        },
        record.payload);
}

std::string render_structure(const AgentConfig& config) {
    std::string out;
    for (const auto& item : config.structure_expectations) out += "- " + item + "\n";
    if (out.empty()) return "(none)";
    out.pop_back();
    return out;
}

FusedPrompt assemble_fused_prompt(const AgentConfig& config, const Outline& outline, const OutlineSection& section,
                                  const std::vector<RetrievalResult>& retrievals, const std::vector<WebResult>& web,
                                  const std::vector<ScoredRecord>& experience, const TemplateSet& templates,
                                  std::size_t token_budget) {
    std::vector<EvidenceItem> items;
    for (std::size_t i = 0; i < retrievals.size(); ++i) {
        const auto& r = retrievals[i];
        items.push_back({PromptSource::explicit_private,
                         {ProvenanceSource::explicit_private, r.chunk.chunk_id},
                         r.score,
                         i,
                         "[chunk " + r.chunk.chunk_id + " | score " + format_score(r.score) + "]\n" + r.chunk.text});
    }
    for (std::size_t i = 0; i < web.size(); ++i) {
        const auto& w = web[i];
        items.push_back({PromptSource::explicit_open,
                         {ProvenanceSource::explicit_open, w.url},
                         web_result_score(w),
                         i,
                         "[" + w.url + "] " + w.title + "\n" + w.snippet});
    }
    for (std::size_t i = 0; i < experience.size(); ++i) {
        const auto& e = experience[i];
        items.push_back({PromptSource::experiential,
                         {ProvenanceSource::experiential, e.record.record_id},
                         e.score,
                         i,
                         "- " + render_guidance(e.record)});
    }

    std::string outline_text;
    for (std::size_t i = 0; i < outline.sections.size(); ++i)
        outline_text += std::to_string(i + 1) + ". " + outline.sections[i].heading + "\n";
    if (!outline_text.empty()) outline_text.pop_back();

    FusedPrompt prompt;
    prompt.system_text = templates.render("section_system", {{"persona", config.persona},
                                                             {"target_domain", config.target_domain.empty() ? "general" : config.target_domain},
                                                             {"style", config.style},
                                                             {"structure", render_structure(config)}});

    auto render_user = [&] {
        std::string blocks[3];
        const PromptSource order[3] = {PromptSource::explicit_private, PromptSource::explicit_open,
                                       PromptSource::experiential};
        for (int b = 0; b < 3; ++b) {
            const char* sep = order[b] == PromptSource::experiential ? "\n" : "\n\n";
            for (const auto& item : items) {
                if (!item.kept || item.source != order[b]) continue;
                if (!blocks[b].empty()) blocks[b] += sep;
                blocks[b] += item.text;
            }
        }
        return templates.render("section_user", {{"title", outline.title},
                                                 {"outline", none_if_empty(outline_text)},
                                                 {"heading", section.heading},
                                                 {"intent_notes", none_if_empty(section.intent_notes)},
                                                 {"private_evidence", none_if_empty(blocks[0])},
                                                 {"open_evidence", none_if_empty(blocks[1])},
                                                 {"experience_guidance", none_if_empty(blocks[2])}});
    };
    auto tokens = [&] { return estimate_tokens(prompt.system_text.size() + prompt.user_text.size()); };

    prompt.user_text = render_user();

    // Drop order: the lowest score first; on ties the later block, then the
    // later item within its block. The top item of each source is held back
    // until nothing else is left.
    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto protected_item = [&](std::size_t i) { return items[i].position == 0; };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        const bool px = protected_item(x), py = protected_item(y);
        if (px != py) return !px;
        if (items[x].score != items[y].score) return items[x].score < items[y].score;
        if (items[x].source != items[y].source) return items[x].source > items[y].source;
        return items[x].position > items[y].position;
    });
    for (std::size_t next = 0; tokens() > token_budget && next < order.size(); ++next) {
        items[order[next]].kept = false;
        prompt.dropped.push_back(items[order[next]].ref);
        prompt.user_text = render_user();
    }
    // Fixed blocks alone exceed the budget: clip, user text first.
    if (tokens() > token_budget) {
        const std::size_t max_chars = token_budget * kCharsPerToken;
        const std::size_t system_room = std::min(prompt.system_text.size(), max_chars);
        prompt.user_text = clip_utf8(prompt.user_text, max_chars - system_room);
        prompt.system_text = clip_utf8(prompt.system_text, system_room);
    }

    prompt.provenance.push_back(PromptSource::prior);
    for (auto source : {PromptSource::explicit_private, PromptSource::explicit_open, PromptSource::experiential}) {
        bool any = false;
        for (const auto& item : items) {
            if (!item.kept || item.source != source) continue;
            any = true;
            prompt.included.push_back(item.ref);
        }
        if (any) prompt.provenance.push_back(source);
    }
    prompt.token_estimate = tokens();
    return prompt;
}

}  // namespace knowpilot
