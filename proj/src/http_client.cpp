#include "http_client.hpp"

#include <httplib.h>

namespace knowpilot::http {

namespace {

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string prefix;  // path without trailing slash
};

SplitUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    const auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    SplitUrl out;
    out.origin = path_start == std::string::npos ? url : url.substr(0, path_start);
    out.prefix = path_start == std::string::npos ? "" : url.substr(path_start);
    while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
    return out;
}

}  // namespace

Reply post_json(const std::string& base_url, const std::string& path, const std::string& body,
                const std::map<std::string, std::string>& headers,
                std::chrono::milliseconds timeout) {
    Reply reply;
    const auto url = split_url(base_url);
    try {
        httplib::Client client(url.origin);
        if (!client.is_valid()) {
            reply.error = "unsupported endpoint url: " + base_url;
            return reply;
        }
        const auto seconds = std::chrono::duration_cast<std::chrono::seconds>(timeout).count();
        const auto micros = std::chrono::duration_cast<std::chrono::microseconds>(timeout).count() % 1000000;
        client.set_connection_timeout(seconds, micros);
        client.set_read_timeout(seconds, micros);
        client.set_write_timeout(seconds, micros);
        httplib::Headers request_headers;
        for (const auto& [key, value] : headers) request_headers.emplace(key, value);
        auto result = client.Post(url.prefix + path, request_headers, body, "application/json");
        if (!result) {
            reply.error = httplib::to_string(result.error());
            return reply;
        }
        reply.status = result->status;
        reply.body = result->body;
    } catch (const std::exception& e) {
        reply.status = 0;
        reply.error = e.what();
    }
    return reply;
}

}  // namespace knowpilot::http
