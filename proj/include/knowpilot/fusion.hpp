#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "knowpilot/domain.hpp"
#include "knowpilot/experience_store.hpp"
#include "knowpilot/llm_gateway.hpp"

namespace knowpilot {

inline constexpr std::size_t kDefaultTokenBudget = 6000;
inline constexpr std::size_t kCharsPerToken = 4;

/// Named prompt templates; starts from the builtin set.
class TemplateSet {
public:
    TemplateSet();

    static TemplateSet builtin();
    /// Builtins, with every <id>.txt found in `directory` replacing its builtin.
    static TemplateSet with_overrides(const std::filesystem::path& directory);

    /// Throws NotFound for an unknown id.
    const PromptTemplate& get(const std::string& id) const;
    std::string render(const std::string& id, const std::map<std::string, std::string>& bindings) const;
    void set(PromptTemplate prompt);
    std::vector<std::string> ids() const;

private:
    std::map<std::string, PromptTemplate> templates_;
};

/// Source tags in their fixed block order.
enum class PromptSource { prior, explicit_private, explicit_open, experiential };

std::string to_string(PromptSource source);

struct FusedPrompt {
    std::string system_text;
    std::string user_text;
    std::vector<PromptSource> provenance;
    std::size_t token_estimate = 0;
    /// Evidence items that survived truncation, in block order.
    std::vector<ProvenanceRef> included;
    /// Evidence items dropped to meet the budget, in drop order.
    std::vector<ProvenanceRef> dropped;
};

void to_json(Json& j, const FusedPrompt& v);

/// ceil(chars / 4).
std::size_t estimate_tokens(std::size_t chars);

/// Score used to order web results against scored evidence: 1 / rank.
double web_result_score(const WebResult& result);

/// Experiential guidance line for one record: edits as "prefer X over Y",
/// corrective prompts as standing instructions, refinements as phrase
/// substitutions.
std::string render_guidance(const ExperienceRecord& record);

/// Deterministic template fill, blocks in fixed order: priors, outline
/// context and section intent, private evidence, open-domain snippets,
/// experiential guidance. When over `token_budget`, evidence items are
/// dropped lowest score first; the best item of each non-empty source is
/// only dropped once no other item is left.
FusedPrompt assemble_fused_prompt(const AgentConfig& config, const Outline& outline, const OutlineSection& section,
                                  const std::vector<RetrievalResult>& retrievals, const std::vector<WebResult>& web,
                                  const std::vector<ScoredRecord>& experience, const TemplateSet& templates,
                                  std::size_t token_budget = kDefaultTokenBudget);

/// Bullet list of structure expectations, "(none)" when empty.
std::string render_structure(const AgentConfig& config);

}  // namespace knowpilot
