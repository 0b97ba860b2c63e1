#include "knowpilot/llm_gateway.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>

#include <spdlog/spdlog.h>

#include "http_client.hpp"

namespace knowpilot {

void validate_request(const ChatRequest& request) {
    if (request.messages.empty()) throw PreconditionViolation("chat request has no messages");
    const auto& first = request.messages.front().role;
    if (first != "system" && first != "user")
        throw PreconditionViolation("first message must be system or user, got " + first);
    for (const auto& m : request.messages) {
        if (m.role != "system" && m.role != "user" && m.role != "assistant")
            throw PreconditionViolation("unknown message role " + m.role);
    }
    if (!(request.temperature >= 0.0)) throw PreconditionViolation("temperature must be >= 0");
    if (request.max_tokens <= 0) throw PreconditionViolation("max_tokens must be positive");
}

Json to_wire(const ChatRequest& request) {
    Json messages = Json::array();
    for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
    return Json{{"model", request.model},
                {"messages", messages},
                {"temperature", request.temperature},
                {"max_tokens", request.max_tokens}};
}

ChatResponse from_wire(const Json& body) {
    ChatResponse out;
    try {
        const auto& content = body.at("choices").at(0).at("message").at("content");
        if (!content.is_string()) throw ProtocolError("message content is not a string");
        out.text = content.get<std::string>();
        if (body.contains("usage") && body["usage"].is_object()) {
            out.prompt_tokens = body["usage"].value("prompt_tokens", std::int64_t{0});
            out.completion_tokens = body["usage"].value("completion_tokens", std::int64_t{0});
        }
    } catch (const Json::exception& e) {
        throw ProtocolError(std::string("malformed chat completion body: ") + e.what());
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

bool is_name_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

}  // namespace

PromptTemplate::PromptTemplate(std::string template_id, std::string body)
    : template_id_(std::move(template_id)), body_(std::move(body)) {
    std::size_t pos = 0;
    while ((pos = body_.find("{{", pos)) != std::string::npos) {
        const auto close = body_.find("}}", pos + 2);
        if (close == std::string::npos)
            throw ValidationError("template " + template_id_ + ": unterminated placeholder");
        const std::string name = body_.substr(pos + 2, close - pos - 2);
        if (name.empty() || !std::all_of(name.begin(), name.end(), is_name_char))
            throw ValidationError("template " + template_id_ + ": malformed placeholder {{" + name + "}}");
        required_.insert(name);
        pos = close + 2;
    }
}

std::string render_prompt(const PromptTemplate& prompt,
                          const std::map<std::string, std::string>& bindings) {
    for (const auto& name : prompt.required_bindings()) {
        if (!bindings.contains(name)) throw MissingBinding(name);
    }
    const auto& body = prompt.body();
    std::string out;
    out.reserve(body.size());
    std::size_t pos = 0;
    while (true) {
        const auto open = body.find("{{", pos);
        if (open == std::string::npos) {
            out.append(body, pos);
            break;
        }
        out.append(body, pos, open - pos);
        const auto close = body.find("}}", open + 2);
        out += bindings.at(body.substr(open + 2, close - open - 2));
        pos = close + 2;
    }
    std::size_t hit = 0;
    while ((hit = out.find("{{", hit)) != std::string::npos) {
        out.insert(hit + 1, " ");
        hit += 2;
    }
    return out;
}

// ---------------------------------------------------------------------------

ChatResponse stub_complete(const ChatRequest& request,
                           const std::map<std::string, std::string>* script) {
    ChatResponse out;
    if (script) {
        if (auto it = script->find(request.request_tag); it != script->end()) {
            out.text = it->second;
            return out;
        }
    }
    std::string concatenated;
    for (const auto& m : request.messages) concatenated += m.content;
    out.text = "STUB:" + hex64(fnv1a64(concatenated));
    out.prompt_tokens = static_cast<std::int64_t>(split_words(concatenated).size());
    out.completion_tokens = 1;
    return out;
}

void StubBackend::script(const std::string& tag, std::vector<StubReply> replies) {
    std::lock_guard lock(mutex_);
    script_[tag] = std::move(replies);
    cursor_[tag] = 0;
}

void StubBackend::script(const std::string& tag, const std::string& text) {
    script(tag, std::vector<StubReply>{{text, 0}});
}

void StubBackend::set_default_latency(std::int64_t latency_ms) {
    std::lock_guard lock(mutex_);
    default_latency_ms_ = latency_ms;
}

ChatResponse StubBackend::send(const ChatRequest& request) {
    std::lock_guard lock(mutex_);
    received_.push_back(request);
    auto it = script_.find(request.request_tag);
    if (it == script_.end() || it->second.empty()) {
        auto out = stub_complete(request);
        out.latency_ms = default_latency_ms_;
        return out;
    }
    auto& cursor = cursor_[request.request_tag];
    const auto& reply = it->second[std::min(cursor, it->second.size() - 1)];
    ++cursor;
    ChatResponse out;
    out.text = reply.text;
    out.latency_ms = reply.latency_ms;
    out.completion_tokens = static_cast<std::int64_t>(split_words(reply.text).size());
    return out;
}

std::vector<ChatRequest> StubBackend::received() const {
    std::lock_guard lock(mutex_);
    return received_;
}

std::vector<ChatRequest> StubBackend::received(const std::string& tag) const {
    std::lock_guard lock(mutex_);
    std::vector<ChatRequest> out;
    for (const auto& r : received_)
        if (r.request_tag == tag) out.push_back(r);
    return out;
}

int StubBackend::calls(const std::string& tag) const {
    std::lock_guard lock(mutex_);
    return static_cast<int>(std::count_if(received_.begin(), received_.end(),
                                          [&](const ChatRequest& r) { return r.request_tag == tag; }));
}

// ---------------------------------------------------------------------------

namespace {

std::string env_or(const char* name, std::string fallback = {}) {
    const char* value = std::getenv(name);
    return value && *value ? std::string(value) : std::move(fallback);
}

}  // namespace

EndpointConfig endpoint_config_from_env() {
    EndpointConfig config;
    config.base_url = env_or("KNOWPILOT_LLM_BASE_URL");
    config.api_key = env_or("KNOWPILOT_LLM_API_KEY");
    config.model = env_or("KNOWPILOT_LLM_MODEL");
    return config;
}

HttpChatBackend::HttpChatBackend(EndpointConfig config) : config_(std::move(config)) {
    if (config_.base_url.empty()) throw PreconditionViolation("LLM endpoint base url not configured");
}

ChatResponse HttpChatBackend::send(const ChatRequest& request) {
    std::map<std::string, std::string> headers;
    if (!config_.api_key.empty()) headers["Authorization"] = "Bearer " + config_.api_key;
    const auto started = std::chrono::steady_clock::now();
    const auto reply =
        http::post_json(config_.base_url, "/chat/completions", to_wire(request).dump(), headers, config_.timeout);
    const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now() - started);
    if (reply.status == 0) throw TransientFailure(0, "transport failure: " + reply.error);
    if (reply.status >= 500) throw TransientFailure(reply.status, "server error " + std::to_string(reply.status));
    if (reply.status >= 400)
        throw RequestRejected("endpoint rejected request with HTTP " + std::to_string(reply.status));
    if (reply.status != 200) throw ProtocolError("unexpected HTTP status " + std::to_string(reply.status));
    Json body;
    try {
        body = Json::parse(reply.body);
    } catch (const Json::parse_error&) {
        throw ProtocolError("chat completion body is not JSON");
    }
    auto out = from_wire(body);
    out.latency_ms = elapsed.count();
    return out;
}

// ---------------------------------------------------------------------------

LlmGateway::LlmGateway(std::shared_ptr<ChatBackend> backend, std::string default_model,
                       RetryPolicy retry, Sleeper sleeper)
    : backend_(std::move(backend)),
      default_model_(std::move(default_model)),
      retry_(retry),
      sleeper_(std::move(sleeper)) {
    if (!backend_) throw PreconditionViolation("gateway needs a backend");
    if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

ChatResponse LlmGateway::complete(ChatRequest request) const {
    if (request.model.empty()) request.model = default_model_;
    validate_request(request);
    std::int64_t waited_ms = 0;
    for (int attempt = 0;; ++attempt) {
        try {
            auto response = backend_->send(request);
            response.attempts = attempt + 1;
            response.latency_ms += waited_ms;
            if (attempt > 0) {
                spdlog::info("llm-gateway: '{}' succeeded after {} retries", request.request_tag, attempt);
            }
            return response;
        } catch (const TransientFailure& failure) {
            if (attempt >= retry_.max_retries) {
                spdlog::error("llm-gateway: '{}' failed after {} retries: {}", request.request_tag,
                              attempt, failure.what());
                throw EndpointUnavailable(std::string("model endpoint unavailable: ") + failure.what());
            }
            const auto delay = retry_.backoff(attempt);
            spdlog::warn("llm-gateway: '{}' attempt {} failed ({}), retry {} in {} ms", request.request_tag,
                         attempt + 1, failure.what(), attempt + 1, delay.count());
            sleeper_(delay);
            waited_ms += delay.count();
        }
    }
}

ChatResponse LlmGateway::complete(const std::string& tag, const std::string& system,
                                  const std::string& user, double temperature) const {
    ChatRequest request;
    request.request_tag = tag;
    request.temperature = temperature;
    if (!system.empty()) request.messages.push_back({"system", system});
    request.messages.push_back({"user", user});
    return complete(std::move(request));
}

}  // namespace knowpilot
