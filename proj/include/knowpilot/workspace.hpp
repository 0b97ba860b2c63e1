#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "knowpilot/experience_store.hpp"
#include "knowpilot/fusion.hpp"
#include "knowpilot/knowledge_store.hpp"
#include "knowpilot/llm_gateway.hpp"
#include "knowpilot/open_search.hpp"
#include "knowpilot/pipeline.hpp"

namespace knowpilot {

// Environment:
//   KNOWPILOT_DATA_DIR            data root (kb/, experience/, sessions/)
//   KNOWPILOT_LLM_BASE_URL, _API_KEY, _MODEL
//   KNOWPILOT_JUDGE_MODEL         judge model on the same endpoint
//   KNOWPILOT_EMBED_BASE_URL, _MODEL, _API_KEY, KNOWPILOT_EMBED_DIM
//   KNOWPILOT_SEARCH_API_KEY, KNOWPILOT_SEARCH_BASE_URL, KNOWPILOT_SEARCH_FIXTURES
//   KNOWPILOT_TEMPLATE_DIR, KNOWPILOT_ID_SEED
struct WorkspaceOptions {
    std::filesystem::path data_dir;
    /// Offline backend, hashing embedder and fixture (or no) search.
    bool offline = false;
    std::optional<std::filesystem::path> templates_dir;
    std::optional<std::filesystem::path> search_fixtures;
    /// Seeds event and record ids; the clock stays the system clock.
    std::optional<std::uint64_t> id_seed;
    PipelineOptions pipeline;

    /// Fills unset fields from the environment. data_dir defaults to
    /// ./knowpilot-data.
    static WorkspaceOptions from_env();
};

/// Every component wired over one data directory.
struct Workspace {
    WorkspaceOptions options;
    Runtime runtime;
    std::shared_ptr<Embedder> embedder;
    std::shared_ptr<KnowledgeStore> knowledge;
    std::shared_ptr<ExperienceStore> experience;
    std::shared_ptr<SearchProvider> search;
    std::shared_ptr<LlmGateway> gateway;
    std::shared_ptr<LlmGateway> judge;
    TemplateSet templates;
    std::shared_ptr<Pipeline> pipeline;

    /// Creates missing directories. Throws StoreCorrupted, or
    /// PreconditionViolation when online mode lacks an LLM endpoint.
    static Workspace open(WorkspaceOptions options);
};

}  // namespace knowpilot
