#include "knowpilot/workspace.hpp"

#include <cstdlib>

#include <spdlog/spdlog.h>

#include "knowpilot/errors.hpp"
#include "knowpilot/offline_backend.hpp"

namespace knowpilot {

namespace {

std::string env(const char* name) {
    const char* value = std::getenv(name);
    return value ? std::string(value) : std::string();
}

}  // namespace

WorkspaceOptions WorkspaceOptions::from_env() {
    WorkspaceOptions options;
    const auto data = env("KNOWPILOT_DATA_DIR");
    options.data_dir = data.empty() ? std::filesystem::path("knowpilot-data") : std::filesystem::path(data);
    if (const auto t = env("KNOWPILOT_TEMPLATE_DIR"); !t.empty()) options.templates_dir = t;
    if (const auto f = env("KNOWPILOT_SEARCH_FIXTURES"); !f.empty()) options.search_fixtures = f;
    if (const auto seed = env("KNOWPILOT_ID_SEED"); !seed.empty()) {
        try {
            options.id_seed = std::stoull(seed);
        } catch (const std::exception&) {
            throw ValidationError("KNOWPILOT_ID_SEED is not a number: " + seed);
        }
    }
    return options;
}

Workspace Workspace::open(WorkspaceOptions options) {
    Workspace ws;
    if (options.data_dir.empty()) throw PreconditionViolation("workspace needs a data directory");
    std::filesystem::create_directories(options.data_dir);

    ws.runtime = Runtime::system();
    if (options.id_seed) {
        // Each open of a seeded workspace takes the next epoch, so repeated
        // invocations on one data directory never reuse ids while the same
        // command sequence on a fresh directory reproduces them.
        const auto epoch_file = options.data_dir / "id-epoch";
        std::uint64_t epoch = 0;
        if (std::filesystem::exists(epoch_file)) {
            try {
                epoch = std::stoull(read_file(epoch_file));
            } catch (const std::exception&) {
                throw StoreCorrupted(epoch_file.string() + " does not hold a number");
            }
        }
        write_file_atomic(epoch_file, std::to_string(epoch + 1) + "\n");
        ws.runtime.ids = std::make_shared<IdGenerator>(*options.id_seed * 1000003ULL + epoch);
    }
    ws.templates = options.templates_dir ? TemplateSet::with_overrides(*options.templates_dir) : TemplateSet::builtin();

    std::size_t dimension = kDefaultEmbeddingDimension;
    if (const auto d = env("KNOWPILOT_EMBED_DIM"); !d.empty()) {
        try {
            dimension = std::stoul(d);
        } catch (const std::exception&) {
            throw ValidationError("KNOWPILOT_EMBED_DIM is not a number: " + d);
        }
    }
    const auto embed_config = HttpEmbedder::config_from_env();
    if (!options.offline && !embed_config.base_url.empty())
        ws.embedder = std::make_shared<HttpEmbedder>(embed_config, dimension);
    else
        ws.embedder = std::make_shared<HashingEmbedder>(dimension);

    ws.knowledge = std::make_shared<KnowledgeStore>(options.data_dir / "kb", ws.embedder, ws.runtime);
    ws.experience = std::make_shared<ExperienceStore>(options.data_dir / "experience", ws.embedder, ws.runtime);

    if (options.search_fixtures) {
        ws.search = std::make_shared<FixtureSearch>(FixtureSearch::from_file(*options.search_fixtures));
    } else if (options.offline) {
        ws.search = std::make_shared<FixtureSearch>();
    } else if (auto serper = SerperConfig::from_env(); !serper.api_key.empty()) {
        ws.search = std::make_shared<SerperSearch>(serper, ws.runtime.clock);
    } else {
        spdlog::warn("KNOWPILOT_SEARCH_API_KEY not set; open-domain search is disabled");
        ws.search = std::make_shared<UnavailableSearch>();
    }

    if (options.offline) {
        auto backend = std::make_shared<OfflineBackend>();
        ws.gateway = std::make_shared<LlmGateway>(backend, "offline");
        ws.judge = std::make_shared<LlmGateway>(backend, "offline-judge");
    } else {
        auto endpoint = endpoint_config_from_env();
        if (endpoint.base_url.empty())
            throw PreconditionViolation("KNOWPILOT_LLM_BASE_URL is not set (use --offline to run without a model)");
        auto backend = std::make_shared<HttpChatBackend>(endpoint);
        ws.gateway = std::make_shared<LlmGateway>(backend, endpoint.model);
        const auto judge_model = env("KNOWPILOT_JUDGE_MODEL");
        ws.judge = std::make_shared<LlmGateway>(backend, judge_model.empty() ? endpoint.model : judge_model);
    }

    PipelineDeps deps{ws.gateway, ws.knowledge, ws.search, ws.experience, ws.templates, ws.runtime,
                      options.data_dir / "sessions"};
    ws.pipeline = std::make_shared<Pipeline>(std::move(deps), options.pipeline);
    ws.options = std::move(options);
    return ws;
}

}  // namespace knowpilot
