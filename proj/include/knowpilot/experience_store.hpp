#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "knowpilot/domain.hpp"
#include "knowpilot/knowledge_store.hpp"

namespace knowpilot {

// ---------------------------------------------------------------------------
// Word-level edit scripts

/// Minimal (deleted + inserted tokens) word-level script turning `original`
/// into `revised`. Tokens are whitespace separated with punctuation attached.
/// Canonical: no two consecutive ops share a kind, and within each changed
/// region the delete precedes the insert.
EditScript compute_edit_script(std::string_view original, std::string_view revised);

/// Replays `script` over the tokens of `original`, joining output tokens
/// with single spaces. Throws ScriptMismatch when keep/delete tokens do not
/// spell out the original.
std::string apply_edit_script(std::string_view original, const EditScript& script);

/// Number of deleted plus inserted tokens.
std::size_t edit_cost(const EditScript& script);

bool is_canonical(const EditScript& script);

// ---------------------------------------------------------------------------
// Store

inline constexpr double kExperienceRelevanceFloor = 0.25;
inline constexpr int kDefaultExperienceLimit = 5;

struct ScoredRecord {
    ExperienceRecord record;
    double score = 0.0;
};

/// DirectEditPayload with its computed script.
DirectEditPayload make_direct_edit(std::string original, std::string revised);

/// Throws InvalidPayload when a payload breaks its kind's invariants.
void validate_payload(ExperienceKind kind, const ExperiencePayload& payload);

/// Append-only log of captured human interventions (experience.jsonl under
/// the store directory). Records are immutable once written. Appends are
/// serialized; readers share the last committed state.
class ExperienceStore {
public:
    /// Empty directory keeps records in memory only.
    ExperienceStore(std::filesystem::path directory, std::shared_ptr<Embedder> embedder, Runtime runtime);

    ExperienceRecord record(ExperienceKind kind, ExperiencePayload payload, std::string context_descriptor,
                            std::string session_id);

    std::optional<ExperienceRecord> get(const std::string& record_id) const;
    std::vector<ExperienceRecord> all() const;
    std::size_t count() const;
    std::size_t count_for_session(const std::string& session_id) const;

    /// Records scoring at least kExperienceRelevanceFloor against the
    /// descriptor, best first; equal scores put newer records first.
    std::vector<ScoredRecord> retrieve_relevant(std::string_view context_descriptor,
                                                int limit = kDefaultExperienceLimit,
                                                const std::set<ExperienceKind>& kinds = {}) const;

    const std::filesystem::path& directory() const { return directory_; }

private:
    std::filesystem::path directory_;
    std::shared_ptr<Embedder> embedder_;
    Runtime runtime_;

    mutable std::shared_mutex mutex_;
    std::vector<ExperienceRecord> records_;
    std::unordered_map<std::string, std::size_t> positions_;
};

}  // namespace knowpilot
