#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "knowpilot/errors.hpp"
#include "knowpilot/util.hpp"

namespace knowpilot {

inline constexpr double kGenerationTemperature = 0.3;
inline constexpr double kParsingTemperature = 0.0;

struct ChatMessage {
    std::string role;  // system | user | assistant
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    double temperature = kGenerationTemperature;
    int max_tokens = 2048;
    std::string request_tag;

    bool operator==(const ChatRequest&) const = default;
};

/// Throws PreconditionViolation describing the first broken invariant.
void validate_request(const ChatRequest& request);

struct ChatResponse {
    std::string text;
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
    std::int64_t latency_ms = 0;
    int attempts = 1;
};

// OpenAI chat-completions wire format.
Json to_wire(const ChatRequest& request);
/// Throws ProtocolError when choices[0].message.content is missing.
ChatResponse from_wire(const Json& body);

// ---------------------------------------------------------------------------
// Templates

/// Text with {{name}} placeholders. required_bindings is always exactly the
/// placeholder set of body.
class PromptTemplate {
public:
    PromptTemplate() = default;
    /// Throws ValidationError on an unterminated or malformed placeholder.
    PromptTemplate(std::string template_id, std::string body);

    const std::string& template_id() const { return template_id_; }
    const std::string& body() const { return body_; }
    const std::set<std::string>& required_bindings() const { return required_; }

private:
    std::string template_id_;
    std::string body_;
    std::set<std::string> required_;
};

/// Fills every placeholder. Any "{{" introduced by a bound value is broken
/// up as "{ {" so the output never contains a residual placeholder opener.
/// Throws MissingBinding(name).
std::string render_prompt(const PromptTemplate& prompt,
                          const std::map<std::string, std::string>& bindings);

// ---------------------------------------------------------------------------
// Backends

/// Retryable backend failure: transport error (status 0) or HTTP 5xx.
class TransientFailure : public std::runtime_error {
public:
    TransientFailure(int status, const std::string& message)
        : std::runtime_error(message), status_(status) {}
    int status() const noexcept { return status_; }

private:
    int status_;
};

class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    /// One attempt. Throws TransientFailure, RequestRejected or ProtocolError.
    virtual ChatResponse send(const ChatRequest& request) = 0;
    virtual std::string name() const = 0;
};

/// "STUB:" followed by the first 16 hex digits of FNV-1a over the
/// concatenated message contents, unless `script` maps the request tag.
ChatResponse stub_complete(const ChatRequest& request,
                           const std::map<std::string, std::string>* script = nullptr);

struct StubReply {
    std::string text;
    std::int64_t latency_ms = 0;
};

/// Deterministic offline backend. A scripted tag replays its replies in
/// order and then keeps repeating the last one; unscripted tags fall back
/// to stub_complete. Every received request is kept for inspection.
class StubBackend final : public ChatBackend {
public:
    StubBackend() = default;

    void script(const std::string& tag, std::vector<StubReply> replies);
    void script(const std::string& tag, const std::string& text);
    void set_default_latency(std::int64_t latency_ms);

    ChatResponse send(const ChatRequest& request) override;
    std::string name() const override { return "stub"; }

    std::vector<ChatRequest> received() const;
    std::vector<ChatRequest> received(const std::string& tag) const;
    int calls(const std::string& tag) const;

private:
    mutable std::mutex mutex_;
    std::map<std::string, std::vector<StubReply>> script_;
    std::map<std::string, std::size_t> cursor_;
    std::vector<ChatRequest> received_;
    std::int64_t default_latency_ms_ = 0;
};

struct EndpointConfig {
    std::string base_url;  // e.g. http://localhost:8000/v1
    std::string api_key;
    std::string model;
    std::chrono::milliseconds timeout{120000};
};

/// Reads KNOWPILOT_LLM_BASE_URL / _API_KEY / _MODEL.
EndpointConfig endpoint_config_from_env();

/// OpenAI-compatible /chat/completions client.
class HttpChatBackend final : public ChatBackend {
public:
    explicit HttpChatBackend(EndpointConfig config);

    ChatResponse send(const ChatRequest& request) override;
    std::string name() const override { return "openai-compatible"; }

private:
    EndpointConfig config_;
};

// ---------------------------------------------------------------------------
// Gateway

struct RetryPolicy {
    int max_retries = 3;
    std::chrono::milliseconds base_backoff{250};

    std::chrono::milliseconds backoff(int attempt) const { return base_backoff * (1 << attempt); }
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

/// Single choke point for model calls. Safe for concurrent use; the
/// configuration is fixed at construction.
class LlmGateway {
public:
    LlmGateway(std::shared_ptr<ChatBackend> backend, std::string default_model = {},
               RetryPolicy retry = {}, Sleeper sleeper = {});

    /// Validates, fills the default model, retries transient failures.
    /// latency_ms of the result covers every attempt and backoff wait.
    ChatResponse complete(ChatRequest request) const;

    /// Convenience: one system and one user message.
    ChatResponse complete(const std::string& tag, const std::string& system,
                          const std::string& user, double temperature) const;

    const ChatBackend& backend() const { return *backend_; }
    const RetryPolicy& retry_policy() const { return retry_; }

private:
    std::shared_ptr<ChatBackend> backend_;
    std::string default_model_;
    RetryPolicy retry_;
    Sleeper sleeper_;
};

}  // namespace knowpilot
