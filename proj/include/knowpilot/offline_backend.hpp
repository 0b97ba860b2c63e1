#pragma once

#include <string>

#include "knowpilot/llm_gateway.hpp"

namespace knowpilot {

/// Network-free backend that answers every request tag the pipeline, the
/// chatbot baseline and the judges use with well-formed, deterministic
/// output derived from the prompt. Meant for demos and offline runs; tests
/// that need exact model output script a StubBackend instead.
class OfflineBackend final : public ChatBackend {
public:
    explicit OfflineBackend(std::int64_t latency_ms = 0) : latency_ms_(latency_ms) {}

    ChatResponse send(const ChatRequest& request) override;
    std::string name() const override { return "offline"; }

private:
    std::int64_t latency_ms_;
};

}  // namespace knowpilot
