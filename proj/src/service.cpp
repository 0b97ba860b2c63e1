#include "knowpilot/service.hpp"

#include <atomic>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "knowpilot/errors.hpp"

namespace knowpilot {

void to_json(Json& j, const ApiError& v) { j = Json{{"code", v.code}, {"message", v.message}, {"detail", v.detail}}; }

int http_status_for(const std::string& code) {
    static const std::map<std::string, int> statuses = {
        {"not_found", 404},
        {"unknown_section", 404},
        {"precondition_violation", 409},
        {"illegal_transition", 409},
        {"session_busy", 409},
        {"duplicate_document", 409},
        {"session_incomplete", 409},
        {"validation_error", 422},
        {"invalid_payload", 422},
        {"phrase_not_found", 422},
        {"script_mismatch", 422},
        {"endpoint_unavailable", 502},
        {"request_rejected", 502},
        {"protocol_error", 502},
        {"config_parse_failure", 502},
        {"outline_parse_failure", 502},
        {"judge_parse_failure", 502},
        {"embedding_unavailable", 502},
        {"search_unavailable", 502},
        {"missing_binding", 500},
        {"degenerate_vector", 500},
        {"store_corrupted", 500},
        {"internal_error", 500},
    };
    auto it = statuses.find(code);
    return it == statuses.end() ? 500 : it->second;
}

ApiError api_error_from(const std::exception& e) {
    if (const auto* domain = dynamic_cast<const Error*>(&e)) return {domain->code(), domain->what(), nullptr};
    if (dynamic_cast<const Json::exception*>(&e)) return {"validation_error", "request does not match the expected shape", nullptr};
    spdlog::error("unhandled exception in request: {}", e.what());
    return {"internal_error", "internal error", nullptr};
}

namespace {

using httplib::Request;
using httplib::Response;

void send_json(Response& res, const Json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(Response& res, const ApiError& error) {
    send_json(res, Json(error), http_status_for(error.code));
}

Json body_of(const Request& req) {
    if (trim(req.body).empty()) return Json::object();
    auto j = Json::parse(req.body, nullptr, false);
    if (j.is_discarded()) throw ValidationError("request body is not valid JSON");
    if (!j.is_object()) throw ValidationError("request body must be a JSON object");
    return j;
}

Json without_embedding(Json j) {
    if (j.is_object()) j.erase("embedding");
    return j;
}

Json retrieval_json(const RetrievalResult& r) {
    Json j = r;
    j["chunk"] = without_embedding(j["chunk"]);
    return j;
}

Json scored_record_json(const ScoredRecord& r) { return Json{{"record", without_embedding(Json(r.record))}, {"score", r.score}}; }

int int_param(const Request& req, const char* name, int fallback) {
    if (!req.has_param(name)) return fallback;
    try {
        return std::stoi(req.get_param_value(name));
    } catch (const std::exception&) {
        throw ValidationError(std::string("query parameter '") + name + "' must be an integer");
    }
}

}  // namespace

struct ApiService::Impl {
    ServiceDeps deps;
    httplib::Server server;
    std::atomic<bool> bound{false};

    template <typename F>
    static httplib::Server::Handler guarded(F fn) {
        return [fn](const Request& req, Response& res) {
            try {
                fn(req, res);
            } catch (const std::exception& e) {
                send_error(res, api_error_from(e));
            }
        };
    }

    void routes();
};

void ApiService::Impl::routes() {
    auto& p = *deps.pipeline;
    auto& kb = *deps.knowledge;
    auto& exp = *deps.experience;

    server.set_read_timeout(120, 0);
    server.set_write_timeout(120, 0);
    server.set_payload_max_length(64u << 20);
    server.set_error_handler([](const Request&, Response& res) {
        if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
        const std::string code = res.status == 404 ? "not_found" : res.status == 405 ? "validation_error" : "internal_error";
        const int status = res.status;
        send_json(res, Json(ApiError{code, status == 404 ? "no such endpoint" : "request failed", nullptr}), status);
        return httplib::Server::HandlerResponse::Handled;
    });

    server.Get("/healthz", guarded([](const Request&, Response& res) { send_json(res, {{"status", "ok"}}); }));

    server.Get("/sessions", guarded([&p](const Request&, Response& res) { send_json(res, {{"sessions", p.session_ids()}}); }));
    server.Post("/sessions", guarded([&p](const Request& req, Response& res) {
        body_of(req);
        send_json(res, p.create_session(), 201);
    }));
    server.Get(R"(/sessions/([^/]+))", guarded([&p](const Request& req, Response& res) {
        send_json(res, p.session(req.matches[1]));
    }));
    server.Post(R"(/sessions/([^/]+)/priors)", guarded([&p](const Request& req, Response& res) {
        const auto body = body_of(req);
        if (!body.contains("brief") || !body["brief"].is_string()) throw ValidationError("body needs a string 'brief'");
        send_json(res, p.parse_priors(req.matches[1], body["brief"].get<std::string>()));
    }));
    server.Patch(R"(/sessions/([^/]+)/config)", guarded([&p](const Request& req, Response& res) {
        send_json(res, p.edit_config(req.matches[1], body_of(req).get<ConfigChange>()));
    }));
    server.Post(R"(/sessions/([^/]+)/outline)", guarded([&p](const Request& req, Response& res) {
        send_json(res, p.generate_outline(req.matches[1]));
    }));
    server.Patch(R"(/sessions/([^/]+)/outline)", guarded([&p](const Request& req, Response& res) {
        send_json(res, p.edit_outline(req.matches[1], body_of(req).get<OutlineCommand>()));
    }));
    server.Post(R"(/sessions/([^/]+)/sections/([^/]+)/retrieve)", guarded([&p](const Request& req, Response& res) {
        const auto r = p.retrieve_for_section(req.matches[1], req.matches[2]);
        Json priv = Json::array(), experience = Json::array();
        for (const auto& x : r.private_results) priv.push_back(retrieval_json(x));
        for (const auto& x : r.experience) experience.push_back(scored_record_json(x));
        send_json(res, {{"private", priv}, {"web", r.web}, {"experience", experience}, {"search_degraded", r.search_degraded}});
    }));
    server.Get(R"(/sessions/([^/]+)/sections/([^/]+)/prompt)", guarded([&p](const Request& req, Response& res) {
        send_json(res, p.fused_prompt(req.matches[1], req.matches[2]));
    }));
    server.Post(R"(/sessions/([^/]+)/sections/([^/]+)/generate)", guarded([&p](const Request& req, Response& res) {
        send_json(res, p.generate_section(req.matches[1], req.matches[2]));
    }));
    server.Post(R"(/sessions/([^/]+)/sections/([^/]+)/actions)", guarded([&p](const Request& req, Response& res) {
        send_json(res, p.submit_user_action(req.matches[1], req.matches[2], body_of(req).get<UserAction>()));
    }));
    server.Post(R"(/sessions/([^/]+)/draft-all)", guarded([&p](const Request& req, Response& res) {
        const auto body = body_of(req);
        send_json(res, p.draft_all_sections(req.matches[1], body.value("auto_accept", false)));
    }));
    server.Get(R"(/sessions/([^/]+)/export)", guarded([&p](const Request& req, Response& res) {
        res.set_content(p.export_markdown(req.matches[1]), "text/markdown; charset=utf-8");
    }));

    server.Get("/kb/documents", guarded([&kb](const Request&, Response& res) {
        Json docs = Json::array();
        for (const auto& d : kb.documents())
            docs.push_back({{"doc_id", d.doc_id}, {"title", d.title}, {"source_path", d.source_path}, {"ingested_at", d.ingested_at}});
        send_json(res, {{"documents", docs}, {"chunk_count", kb.chunk_count()}});
    }));
    server.Post("/kb/documents", guarded([&kb](const Request& req, Response& res) {
        RawDocument doc;
        const auto type = req.get_header_value("Content-Type");
        if (type.rfind("application/json", 0) == 0) {
            doc = body_of(req).get<RawDocument>();
        } else {
            doc.body = req.body;
            doc.title = req.get_param_value("title");
            doc.doc_id = req.get_param_value("doc_id");
        }
        const auto ids = kb.ingest_document(doc);
        std::string doc_id = doc.doc_id;
        if (doc_id.empty() && !ids.empty())
            if (const auto chunk = kb.chunk(ids.front())) doc_id = chunk->source_doc;
        send_json(res, {{"doc_id", doc_id}, {"chunk_ids", ids}, {"chunk_count", ids.size()}}, 201);
    }));
    server.Get("/kb/search", guarded([&kb](const Request& req, Response& res) {
        if (!req.has_param("q")) throw ValidationError("query parameter 'q' is required");
        Json results = Json::array();
        for (const auto& r : kb.retrieve_top_k(req.get_param_value("q"), int_param(req, "k", kDefaultTopK)))
            results.push_back(retrieval_json(r));
        send_json(res, {{"results", results}});
    }));
    server.Get("/experience", guarded([&exp](const Request& req, Response& res) {
        std::set<ExperienceKind> kinds;
        if (req.has_param("kind")) kinds.insert(parse_experience_kind(req.get_param_value("kind")));
        Json records = Json::array();
        if (req.has_param("query")) {
            for (const auto& r : exp.retrieve_relevant(req.get_param_value("query"),
                                                       int_param(req, "limit", kDefaultExperienceLimit), kinds))
                records.push_back(scored_record_json(r));
        } else {
            for (const auto& r : exp.all())
                if (kinds.empty() || kinds.contains(r.kind)) records.push_back({{"record", without_embedding(Json(r))}});
        }
        send_json(res, {{"records", records}});
    }));
}

ApiService::ApiService(ServiceDeps deps) : impl_(std::make_unique<Impl>()) {
    if (!deps.pipeline || !deps.knowledge || !deps.experience)
        throw PreconditionViolation("service needs a pipeline, knowledge store and experience store");
    impl_->deps = std::move(deps);
    impl_->routes();
}

ApiService::~ApiService() { stop(); }

int ApiService::bind(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
        bound = impl_->server.bind_to_any_port(host);
        if (bound < 0) throw PreconditionViolation("could not bind " + host);
    } else if (!impl_->server.bind_to_port(host, port)) {
        throw PreconditionViolation("could not bind " + host + ":" + std::to_string(port));
    }
    impl_->bound = true;
    spdlog::info("listening on {}:{}", host, bound);
    return bound;
}

void ApiService::run() {
    if (!impl_->bound) throw PreconditionViolation("bind() before run()");
    impl_->server.listen_after_bind();
}

void ApiService::stop() {
    if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

bool ApiService::running() const { return impl_->server.is_running(); }

}  // namespace knowpilot
