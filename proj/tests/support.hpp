#pragma once

// Shared fixtures for the test binaries.

#include <atomic>
#include <filesystem>
#include <memory>
#include <random>
#include <string>

#include "knowpilot/experience_store.hpp"
#include "knowpilot/knowledge_store.hpp"
#include "knowpilot/llm_gateway.hpp"
#include "knowpilot/open_search.hpp"
#include "knowpilot/pipeline.hpp"

namespace kptest {

namespace fs = std::filesystem;

/// Fresh directory removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        std::random_device rd;
        path_ = fs::temp_directory_path() /
                ("kp-test-" + std::to_string(rd()) + "-" + std::to_string(counter.fetch_add(1)));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& child) const { return path_ / child; }

private:
    fs::path path_;
};

inline const char* kConfigReply =
    R"({"persona": "cardiologist", "style": "formal", "structure_expectations": ["define terms first"], "target_domain": "cardiology"})";

inline std::string outline_reply(int sections) {
    std::string out = "Title: Heart Failure Care\n";
    const char* headings[] = {"Diagnosis", "Drug Therapy", "Device Therapy", "Follow-up", "Prognosis", "Lifestyle"};
    for (int i = 0; i < sections; ++i)
        out += std::to_string(i + 1) + ". " + headings[i % 6] + " :: what to cover in " + headings[i % 6] + "\n";
    return out;
}

/// Stub wired for a full session: config, outline with `sections`
/// sections, keywords, section and corrective replies.
inline std::shared_ptr<knowpilot::StubBackend> scripted_stub(int sections = 3) {
    auto stub = std::make_shared<knowpilot::StubBackend>();
    stub->script("parse_priors", kConfigReply);
    stub->script("edit_config",
                 R"({"persona": "cardiologist", "style": "casual", "structure_expectations": ["define terms first"], "target_domain": "cardiology"})");
    stub->script("outline", outline_reply(sections));
    stub->script("keywords", "ejection fraction\nbeta blockers\nloop diuretics");
    stub->script("section", "Heart failure is treated with beta blockers in most patients.");
    stub->script("corrective", "Heart failure is usually treated with beta blockers and ACE inhibitors.");
    return stub;
}

struct Harness {
    std::shared_ptr<knowpilot::StubBackend> stub;
    std::shared_ptr<knowpilot::LlmGateway> gateway;
    std::shared_ptr<knowpilot::HashingEmbedder> embedder;
    std::shared_ptr<knowpilot::KnowledgeStore> knowledge;
    std::shared_ptr<knowpilot::ExperienceStore> experience;
    std::shared_ptr<knowpilot::FixtureSearch> search;
    knowpilot::Runtime session_runtime;
    std::shared_ptr<knowpilot::LogicalClock> clock;
    std::shared_ptr<knowpilot::Pipeline> pipeline;
};

/// Stub-backed pipeline over `root` (empty root: in memory). The pipeline
/// has its own logical clock so store reads never move session time.
inline Harness make_harness(const fs::path& root, std::shared_ptr<knowpilot::StubBackend> stub = scripted_stub(),
                            knowpilot::PipelineOptions options = {}, std::uint64_t seed = 7,
                            knowpilot::TimestampMs step_ms = 1000) {
    using namespace knowpilot;
    Harness h;
    h.stub = std::move(stub);
    h.gateway = std::make_shared<LlmGateway>(h.stub, "stub-model", RetryPolicy{}, [](std::chrono::milliseconds) {});
    h.embedder = std::make_shared<HashingEmbedder>();
    auto store_runtime = Runtime::deterministic(seed * 31 + 1, 1'000'000, 1);
    h.knowledge = std::make_shared<KnowledgeStore>(root.empty() ? fs::path() : root / "kb", h.embedder, store_runtime);
    h.experience =
        std::make_shared<ExperienceStore>(root.empty() ? fs::path() : root / "experience", h.embedder, store_runtime);
    h.search = std::make_shared<FixtureSearch>();
    h.clock = std::make_shared<LogicalClock>(0, step_ms);
    h.session_runtime = Runtime{h.clock, std::make_shared<IdGenerator>(seed)};
    PipelineDeps deps{h.gateway, h.knowledge, h.search, h.experience, TemplateSet::builtin(), h.session_runtime,
                      root.empty() ? fs::path() : root / "sessions"};
    h.pipeline = std::make_shared<Pipeline>(std::move(deps), std::move(options));
    return h;
}

inline std::string read_text(const fs::path& path) {
    return knowpilot::read_file(path);
}

}  // namespace kptest
