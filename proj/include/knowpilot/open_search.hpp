#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "knowpilot/domain.hpp"

namespace knowpilot {

inline constexpr int kDefaultSearchLimit = 5;

class SearchProvider {
public:
    virtual ~SearchProvider() = default;
    /// At most `limit` results in provider order, ranks 1..n.
    /// Throws SearchUnavailable.
    virtual std::vector<WebResult> search(const std::string& query, int limit = kDefaultSearchLimit) = 0;
    virtual std::string name() const = 0;
};

/// Offline provider backed by canned results keyed on the exact query.
class FixtureSearch final : public SearchProvider {
public:
    FixtureSearch() = default;
    explicit FixtureSearch(std::map<std::string, std::vector<WebResult>> fixtures);

    /// JSON object {"query": [{"title", "snippet", "link"|"url"}, ...]}.
    static FixtureSearch from_file(const std::filesystem::path& path);

    void add(const std::string& query, std::vector<WebResult> results);
    std::vector<WebResult> search(const std::string& query, int limit = kDefaultSearchLimit) override;
    std::string name() const override { return "fixture"; }

private:
    std::map<std::string, std::vector<WebResult>> fixtures_;
};

/// Always throws SearchUnavailable; used to exercise degraded runs.
class UnavailableSearch final : public SearchProvider {
public:
    std::vector<WebResult> search(const std::string& query, int limit = kDefaultSearchLimit) override;
    std::string name() const override { return "unavailable"; }
};

struct SerperConfig {
    std::string api_key;
    std::string base_url = "https://google.serper.dev";
    std::chrono::milliseconds timeout{15000};

    /// KNOWPILOT_SEARCH_API_KEY, optional KNOWPILOT_SEARCH_BASE_URL.
    static SerperConfig from_env();
};

/// Serper wire format: POST /search {"q", "num"}; results under "organic"
/// with title, snippet and link.
class SerperSearch final : public SearchProvider {
public:
    SerperSearch(SerperConfig config, std::shared_ptr<Clock> clock);

    std::vector<WebResult> search(const std::string& query, int limit = kDefaultSearchLimit) override;
    std::string name() const override { return "serper"; }

private:
    SerperConfig config_;
    std::shared_ptr<Clock> clock_;
};

/// Parses a Serper response body into ranked results.
std::vector<WebResult> parse_serper_response(const Json& body, int limit, TimestampMs fetched_at);

}  // namespace knowpilot
