#include "knowpilot/open_search.hpp"

#include <cstdlib>

#include "http_client.hpp"
#include "knowpilot/errors.hpp"

namespace knowpilot {

namespace {

std::vector<WebResult> ranked(std::vector<WebResult> results, int limit) {
    if (limit < 1) throw PreconditionViolation("search limit must be at least 1");
    if (results.size() > static_cast<std::size_t>(limit)) results.resize(static_cast<std::size_t>(limit));
    for (std::size_t i = 0; i < results.size(); ++i) results[i].rank = static_cast<int>(i + 1);
    return results;
}

}  // namespace

FixtureSearch::FixtureSearch(std::map<std::string, std::vector<WebResult>> fixtures)
    : fixtures_(std::move(fixtures)) {}

FixtureSearch FixtureSearch::from_file(const std::filesystem::path& path) {
    const auto body = Json::parse(read_file(path));
    FixtureSearch out;
    for (const auto& [query, items] : body.items()) {
        std::vector<WebResult> results;
        for (const auto& item : items) {
            WebResult r;
            r.title = item.value("title", std::string{});
            r.snippet = item.value("snippet", std::string{});
            r.url = item.contains("link") ? item["link"].get<std::string>() : item.at("url").get<std::string>();
            results.push_back(std::move(r));
        }
        out.add(query, std::move(results));
    }
    return out;
}

void FixtureSearch::add(const std::string& query, std::vector<WebResult> results) {
    fixtures_[query] = std::move(results);
}

std::vector<WebResult> FixtureSearch::search(const std::string& query, int limit) {
    if (trim(query).empty()) throw PreconditionViolation("search query is empty");
    auto it = fixtures_.find(query);
    if (it == fixtures_.end()) return ranked({}, limit);
    return ranked(it->second, limit);
}

std::vector<WebResult> UnavailableSearch::search(const std::string& query, int) {
    throw SearchUnavailable("search provider unavailable for query '" + query + "'");
}

SerperConfig SerperConfig::from_env() {
    SerperConfig config;
    if (const char* key = std::getenv("KNOWPILOT_SEARCH_API_KEY")) config.api_key = key;
    if (const char* url = std::getenv("KNOWPILOT_SEARCH_BASE_URL"); url && *url) config.base_url = url;
    return config;
}

SerperSearch::SerperSearch(SerperConfig config, std::shared_ptr<Clock> clock)
    : config_(std::move(config)), clock_(std::move(clock)) {}

std::vector<WebResult> parse_serper_response(const Json& body, int limit, TimestampMs fetched_at) {
    std::vector<WebResult> results;
    if (!body.contains("organic")) return ranked({}, limit);
    for (const auto& item : body.at("organic")) {
        WebResult r;
        r.title = item.value("title", std::string{});
        r.snippet = item.value("snippet", std::string{});
        r.url = item.value("link", std::string{});
        r.fetched_at = fetched_at;
        if (r.url.empty()) continue;
        results.push_back(std::move(r));
    }
    return ranked(std::move(results), limit);
}

std::vector<WebResult> SerperSearch::search(const std::string& query, int limit) {
    if (trim(query).empty()) throw PreconditionViolation("search query is empty");
    if (config_.api_key.empty()) throw SearchUnavailable("KNOWPILOT_SEARCH_API_KEY not configured");
    const Json request{{"q", query}, {"num", limit}};
    const auto reply = http::post_json(config_.base_url, "/search", request.dump(),
                                       {{"X-API-KEY", config_.api_key}}, config_.timeout);
    if (reply.status != 200) {
        throw SearchUnavailable("search provider failed: " +
                                (reply.status == 0 ? reply.error : "HTTP " + std::to_string(reply.status)));
    }
    try {
        return parse_serper_response(Json::parse(reply.body), limit, clock_->now_ms());
    } catch (const Json::exception& e) {
        throw SearchUnavailable(std::string("malformed search response: ") + e.what());
    }
}

}  // namespace knowpilot
