#include "knowpilot/experience_store.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include "knowpilot/errors.hpp"

namespace knowpilot {

namespace {

void push_op(EditScript& script, EditKind kind, const std::string& token) {
    if (script.empty() || script.back().kind != kind) script.push_back({kind, {}});
    script.back().tokens.push_back(token);
}

}  // namespace

EditScript compute_edit_script(std::string_view original, std::string_view revised) {
    const auto a = split_words(original);
    const auto b = split_words(revised);

    // Common prefix and suffix are kept verbatim; the DP only spans the middle.
    std::size_t prefix = 0;
    while (prefix < a.size() && prefix < b.size() && a[prefix] == b[prefix]) ++prefix;
    std::size_t suffix = 0;
    while (suffix < a.size() - prefix && suffix < b.size() - prefix &&
           a[a.size() - 1 - suffix] == b[b.size() - 1 - suffix])
        ++suffix;

    const std::size_t n = a.size() - prefix - suffix;
    const std::size_t m = b.size() - prefix - suffix;
    const std::size_t width = m + 1;
    // lcs[i * width + j]: LCS length of a[prefix+i..] and b[prefix+j..] within the middle.
    std::vector<std::uint32_t> lcs((n + 1) * width, 0);
    for (std::size_t i = n; i-- > 0;) {
        for (std::size_t j = m; j-- > 0;) {
            lcs[i * width + j] = a[prefix + i] == b[prefix + j]
                                     ? lcs[(i + 1) * width + j + 1] + 1
                                     : std::max(lcs[(i + 1) * width + j], lcs[i * width + j + 1]);
        }
    }

    std::vector<std::pair<std::size_t, std::size_t>> matches;
    for (std::size_t i = 0, j = 0; i < n && j < m;) {
        if (a[prefix + i] == b[prefix + j]) {
            matches.emplace_back(prefix + i, prefix + j);
            ++i;
            ++j;
        } else if (lcs[(i + 1) * width + j] >= lcs[i * width + j + 1]) {
            ++i;
        } else {
            ++j;
        }
    }

    EditScript script;
    for (std::size_t k = 0; k < prefix; ++k) push_op(script, EditKind::keep, a[k]);
    std::size_t ai = prefix;
    std::size_t bj = prefix;
    auto flush_gap = [&](std::size_t a_end, std::size_t b_end) {
        for (; ai < a_end; ++ai) push_op(script, EditKind::erase, a[ai]);
        for (; bj < b_end; ++bj) push_op(script, EditKind::insert, b[bj]);
    };
    for (const auto& [mi, mj] : matches) {
        flush_gap(mi, mj);
        push_op(script, EditKind::keep, a[mi]);
        ++ai;
        ++bj;
    }
    flush_gap(a.size() - suffix, b.size() - suffix);
    for (std::size_t k = a.size() - suffix; k < a.size(); ++k) push_op(script, EditKind::keep, a[k]);
    return script;
}

std::string apply_edit_script(std::string_view original, const EditScript& script) {
    const auto tokens = split_words(original);
    std::vector<std::string> out;
    std::size_t i = 0;
    for (const auto& op : script) {
        for (const auto& token : op.tokens) {
            if (op.kind == EditKind::insert) {
                out.push_back(token);
                continue;
            }
            if (i >= tokens.size() || tokens[i] != token)
                throw ScriptMismatch("edit script expects '" + token + "' at token " + std::to_string(i));
            if (op.kind == EditKind::keep) out.push_back(token);
            ++i;
        }
    }
    if (i != tokens.size())
        throw ScriptMismatch("edit script leaves " + std::to_string(tokens.size() - i) + " original tokens unconsumed");
    return join(out, " ");
}

std::size_t edit_cost(const EditScript& script) {
    std::size_t cost = 0;
    for (const auto& op : script)
        if (op.kind != EditKind::keep) cost += op.tokens.size();
    return cost;
}

bool is_canonical(const EditScript& script) {
    for (std::size_t i = 0; i < script.size(); ++i) {
        if (script[i].tokens.empty()) return false;
        if (i > 0 && script[i].kind == script[i - 1].kind) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------

DirectEditPayload make_direct_edit(std::string original, std::string revised) {
    DirectEditPayload payload;
    payload.edit_script = compute_edit_script(original, revised);
    payload.original = std::move(original);
    payload.revised = std::move(revised);
    return payload;
}

void validate_payload(ExperienceKind kind, const ExperiencePayload& payload) {
    if (payload_kind(payload) != kind)
        throw InvalidPayload("payload for " + to_string(payload_kind(payload)) + " tagged as " + to_string(kind));
    if (const auto* edit = std::get_if<DirectEditPayload>(&payload)) {
        if (!is_canonical(edit->edit_script)) throw InvalidPayload("direct edit script is not canonical");
        try {
            if (apply_edit_script(edit->original, edit->edit_script) != normalize_whitespace(edit->revised))
                throw InvalidPayload("direct edit script does not produce the revised text");
        } catch (const ScriptMismatch& e) {
            throw InvalidPayload(std::string("direct edit script does not fit the original: ") + e.what());
        }
    } else if (const auto* prompt = std::get_if<CorrectivePromptPayload>(&payload)) {
        if (trim(prompt->instruction).empty()) throw InvalidPayload("corrective prompt instruction is empty");
    } else if (const auto* refinement = std::get_if<RefinementPayload>(&payload)) {
        if (refinement->original_phrase.empty()) throw InvalidPayload("refinement original phrase is empty");
        if (refinement->original_phrase == refinement->revised_phrase)
            throw InvalidPayload("refinement phrases are identical");
    }
}

ExperienceStore::ExperienceStore(std::filesystem::path directory, std::shared_ptr<Embedder> embedder,
                                 Runtime runtime)
    : directory_(std::move(directory)), embedder_(std::move(embedder)), runtime_(std::move(runtime)) {
    if (!embedder_) throw PreconditionViolation("experience store needs an embedder");
    if (directory_.empty()) return;
    std::filesystem::create_directories(directory_);
    try {
        for (const auto& line : read_jsonl(directory_ / "experience.jsonl")) {
            auto record = line.get<ExperienceRecord>();
            if (record.embedding.size() != embedder_->dimension())
                throw StoreCorrupted("record " + record.record_id + " has embedding dimension " +
                                     std::to_string(record.embedding.size()));
            if (positions_.contains(record.record_id)) continue;
            positions_.emplace(record.record_id, records_.size());
            records_.push_back(std::move(record));
        }
    } catch (const StoreCorrupted&) {
        throw;
    } catch (const std::exception& e) {
        throw StoreCorrupted("experience store " + directory_.string() + ": " + e.what());
    }
}

ExperienceRecord ExperienceStore::record(ExperienceKind kind, ExperiencePayload payload,
                                         std::string context_descriptor, std::string session_id) {
    validate_payload(kind, payload);
    if (trim(context_descriptor).empty()) throw InvalidPayload("context descriptor is empty");
    ExperienceRecord rec;
    rec.kind = kind;
    rec.payload = std::move(payload);
    rec.embedding = embedder_->embed(context_descriptor);
    rec.context_descriptor = std::move(context_descriptor);
    rec.session_id = std::move(session_id);

    std::unique_lock lock(mutex_);
    rec.record_id = runtime_.ids->next();
    rec.captured_at = runtime_.clock->now_ms();
    if (!directory_.empty()) append_jsonl(directory_ / "experience.jsonl", Json(rec));
    positions_.emplace(rec.record_id, records_.size());
    records_.push_back(rec);
    return rec;
}

std::optional<ExperienceRecord> ExperienceStore::get(const std::string& record_id) const {
    std::shared_lock lock(mutex_);
    auto it = positions_.find(record_id);
    if (it == positions_.end()) return std::nullopt;
    return records_[it->second];
}

std::vector<ExperienceRecord> ExperienceStore::all() const {
    std::shared_lock lock(mutex_);
    return records_;
}

std::size_t ExperienceStore::count() const {
    std::shared_lock lock(mutex_);
    return records_.size();
}

std::size_t ExperienceStore::count_for_session(const std::string& session_id) const {
    std::shared_lock lock(mutex_);
    return static_cast<std::size_t>(std::count_if(records_.begin(), records_.end(),
                                                  [&](const ExperienceRecord& r) { return r.session_id == session_id; }));
}

std::vector<ScoredRecord> ExperienceStore::retrieve_relevant(std::string_view context_descriptor, int limit,
                                                             const std::set<ExperienceKind>& kinds) const {
    if (limit < 1) throw PreconditionViolation("limit must be at least 1");
    {
        std::shared_lock lock(mutex_);
        if (records_.empty()) return {};
    }
    if (trim(context_descriptor).empty()) return {};
    const auto query = embedder_->embed(context_descriptor);

    struct Candidate {
        std::size_t position;
        double score;
    };
    std::shared_lock lock(mutex_);
    std::vector<Candidate> candidates;
    for (std::size_t i = 0; i < records_.size(); ++i) {
        const auto& r = records_[i];
        if (!kinds.empty() && !kinds.contains(r.kind)) continue;
        const double score = cosine_similarity(query, r.embedding);
        if (score >= kExperienceRelevanceFloor) candidates.push_back({i, score});
    }
    std::sort(candidates.begin(), candidates.end(), [&](const Candidate& x, const Candidate& y) {
        if (x.score != y.score) return x.score > y.score;
        const auto& rx = records_[x.position];
        const auto& ry = records_[y.position];
        if (rx.captured_at != ry.captured_at) return rx.captured_at > ry.captured_at;
        return x.position > y.position;
    });
    if (candidates.size() > static_cast<std::size_t>(limit)) candidates.resize(static_cast<std::size_t>(limit));
    std::vector<ScoredRecord> out;
    out.reserve(candidates.size());
    for (const auto& c : candidates) out.push_back({records_[c.position], c.score});
    return out;
}

}  // namespace knowpilot
