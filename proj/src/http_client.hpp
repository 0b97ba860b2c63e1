#pragma once

// Thin blocking HTTP client shared by the model, embedding and search
// backends. Keeps cpp-httplib out of every other translation unit.

#include <chrono>
#include <map>
#include <string>

namespace knowpilot::http {

struct Reply {
    int status = 0;  // 0: transport failure, see error
    std::string body;
    std::string error;
};

/// POSTs `body` as application/json to base_url + path. base_url may carry
/// a path prefix (http://host:8000/v1).
Reply post_json(const std::string& base_url, const std::string& path, const std::string& body,
                const std::map<std::string, std::string>& headers,
                std::chrono::milliseconds timeout);

}  // namespace knowpilot::http
