#pragma once

#include <memory>
#include <string>

#include "knowpilot/experience_store.hpp"
#include "knowpilot/knowledge_store.hpp"
#include "knowpilot/pipeline.hpp"

namespace knowpilot {

/// Error body of every failed request: {"code", "message", "detail"}.
struct ApiError {
    std::string code;
    std::string message;
    Json detail = nullptr;
};

void to_json(Json& j, const ApiError& v);

/// Closed set of codes: the domain error codes plus "internal_error".
/// 404 unknown ids, 409 preconditions and conflicts, 422 validation,
/// 502 model, embedding and search failures, 500 otherwise.
int http_status_for(const std::string& code);

/// Maps any exception to its ApiError. Messages of non-domain exceptions
/// are not exposed.
ApiError api_error_from(const std::exception& e);

struct ServiceDeps {
    std::shared_ptr<Pipeline> pipeline;
    std::shared_ptr<KnowledgeStore> knowledge;
    std::shared_ptr<ExperienceStore> experience;
};

/// HTTP/JSON front of the pipeline and stores. Every endpoint delegates to
/// one library operation.
///
///   GET    /healthz
///   GET    /sessions                          POST /sessions
///   GET    /sessions/{id}
///   POST   /sessions/{id}/priors              {"brief"}
///   PATCH  /sessions/{id}/config              ConfigChange
///   POST   /sessions/{id}/outline             generate
///   PATCH  /sessions/{id}/outline             OutlineCommand
///   POST   /sessions/{id}/sections/{sid}/retrieve
///   GET    /sessions/{id}/sections/{sid}/prompt
///   POST   /sessions/{id}/sections/{sid}/generate
///   POST   /sessions/{id}/sections/{sid}/actions   UserAction
///   POST   /sessions/{id}/draft-all           {"auto_accept"}
///   GET    /sessions/{id}/export              text/markdown
///   GET    /kb/documents                      POST /kb/documents (201)
///   GET    /kb/search?q=&k=
///   GET    /experience?query=&kind=&limit=
class ApiService {
public:
    explicit ApiService(ServiceDeps deps);
    ~ApiService();
    ApiService(const ApiService&) = delete;
    ApiService& operator=(const ApiService&) = delete;

    /// Port 0 picks an ephemeral port. Returns the bound port; throws
    /// PreconditionViolation when binding fails.
    int bind(const std::string& host, int port);
    /// Serves until stop(). Requires bind().
    void run();
    /// Stops accepting and lets in-flight requests finish.
    void stop();
    bool running() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace knowpilot
