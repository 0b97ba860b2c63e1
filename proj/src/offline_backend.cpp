#include "knowpilot/offline_backend.hpp"

#include <algorithm>
#include <regex>

namespace knowpilot {

namespace {

const char* const kHeadings[] = {"Background",        "Core Concepts",     "Current Practice", "Evidence Review",
                                 "Key Challenges",    "Case Illustrations", "Recommendations", "Outlook",
                                 "Practical Guidance", "Summary"};

std::string between(const std::string& text, const std::string& open, const std::string& close) {
    const auto start = text.find(open);
    if (start == std::string::npos) return {};
    const auto from = start + open.size();
    const auto end = close.empty() ? std::string::npos : text.find(close, from);
    return trim(text.substr(from, end == std::string::npos ? std::string::npos : end - from));
}

std::string line_after(const std::string& text, const std::string& label) {
    return between(text, label, "\n");
}

std::string capture(const std::string& text, const std::regex& re, std::size_t group = 1) {
    std::smatch m;
    return std::regex_search(text, m, re) ? trim(m[group].str()) : std::string();
}

std::string first_words(const std::string& text, std::size_t count) {
    auto words = split_words(text);
    if (words.size() > count) words.resize(count);
    return join(words, " ");
}

std::string last_user(const ChatRequest& request) {
    for (auto it = request.messages.rbegin(); it != request.messages.rend(); ++it)
        if (it->role == "user") return it->content;
    return {};
}

std::string first_user(const ChatRequest& request) {
    for (const auto& m : request.messages)
        if (m.role == "user") return m.content;
    return {};
}

std::string config_for_brief(const std::string& brief) {
    static const std::regex persona_re(R"(\bas an? ([^,.;]+))", std::regex::icase);
    static const std::regex tone_re(R"(\b([A-Za-z-]+) (tone|register|style)\b)", std::regex::icase);
    static const std::regex sections_re(R"(\b(\d+) sections?\b)", std::regex::icase);
    static const std::regex domain_re(R"(\b(?:about|on) ([^,.;]+))", std::regex::icase);
    auto persona = capture(brief, persona_re);
    auto style = capture(brief, tone_re, 0);
    const auto sections = capture(brief, sections_re);
    auto domain = capture(brief, domain_re);
    Json structure = Json::array({"open with context before detail", "close with practical takeaways"});
    if (!sections.empty()) structure.insert(structure.begin(), sections + " sections");
    return Json{{"persona", persona.empty() ? "domain expert" : persona},
                {"style", style.empty() ? "clear and professional" : style},
                {"structure_expectations", structure},
                {"target_domain", domain.empty() ? "general" : first_words(domain, 6)}}
        .dump();
}

std::string edit_config(const std::string& prompt) {
    auto config = Json::parse(between(prompt, "Current configuration:\n", "\n\nApply this change"), nullptr, false);
    const auto instruction = between(prompt, "requested by the writer:\n", "\n\nReply");
    if (config.is_discarded() || !config.is_object()) return config_for_brief(instruction);
    config["style"] = config.value("style", std::string("clear")) + "; " + instruction;
    return config.dump();
}

std::string outline_for_brief(const std::string& brief) {
    static const std::regex sections_re(R"(\b(\d+) sections?\b)", std::regex::icase);
    const auto n_text = capture(brief, sections_re);
    std::size_t n = n_text.empty() ? 3 : std::stoul(n_text);
    n = std::clamp<std::size_t>(n, 1, std::size(kHeadings));
    std::string out = "Title: " + (brief.empty() ? std::string("Untitled") : first_words(brief, 10)) + "\n";
    for (std::size_t i = 0; i < n; ++i) {
        const std::string heading = i + 1 == n && n > 1 ? "Summary" : kHeadings[i];
        out += std::to_string(i + 1) + ". " + heading + " :: " + heading + " as it applies to the brief\n";
    }
    return out;
}

std::string first_private_excerpt(const std::string& prompt) {
    const auto block = between(prompt, "## Private evidence\n", "\n\n## Open-domain evidence");
    if (block.empty() || block == "(none)") return {};
    const auto newline = block.find('\n');
    if (newline == std::string::npos) return {};
    auto excerpt = first_words(block.substr(newline + 1), 30);
    while (!excerpt.empty() && (excerpt.back() == '.' || excerpt.back() == ',' || excerpt.back() == ';')) excerpt.pop_back();
    return excerpt;
}

std::string section_text(const std::string& prompt) {
    const auto heading = line_after(prompt, "Current section: ");
    const auto title = line_after(prompt, "Article: ");
    std::string out = heading + " is a central part of " + (title.empty() ? std::string("this article") : title) + ".";
    if (const auto excerpt = first_private_excerpt(prompt); !excerpt.empty())
        out += " The reference material notes: " + excerpt + ".";
    out += " This draft covers " + to_lower_ascii(heading) + " in a structured way (ref " +
           hex64(fnv1a64(prompt)).substr(0, 8) + ").";
    return out;
}

std::string judge_reply(const ChatRequest& request) {
    const auto digest = fnv1a64(last_user(request));
    return "Offline assessment.\nSCORE: " + std::to_string(3 + digest % 3);
}

}  // namespace

ChatResponse OfflineBackend::send(const ChatRequest& request) {
    validate_request(request);
    const auto& tag = request.request_tag;
    const auto user = last_user(request);
    std::string text;
    if (tag == "parse_priors") {
        text = config_for_brief(between(first_user(request), "Brief:\n", "\n\nGuidance"));
    } else if (tag == "edit_config") {
        text = edit_config(first_user(request));
    } else if (tag == "outline") {
        text = outline_for_brief(between(first_user(request), "brief:\n", "\n\nGuidance"));
    } else if (tag == "keywords") {
        const auto heading = line_after(user, "Section: ");
        const auto title = line_after(user, "Article: ");
        text = heading + " overview\n" + heading + " " + first_words(title, 4) + "\n" + heading + " examples";
    } else if (tag == "section") {
        text = section_text(user);
    } else if (tag == "corrective") {
        std::string previous;
        for (const auto& m : request.messages)
            if (m.role == "assistant") previous = m.content;
        const auto instruction = between(user, "keeping everything else that still applies:\n", "\n\nReply");
        text = previous + " Revised to " + (instruction.empty() ? std::string("address the feedback") : instruction) + ".";
    } else if (tag.rfind("judge_", 0) == 0) {
        text = judge_reply(request);
    } else if (tag == "chatbot_outline") {
        text = outline_for_brief(first_words(first_user(request), 40));
    } else if (tag == "chatbot_article") {
        std::string outline;
        for (const auto& m : request.messages)
            if (m.role == "assistant") outline = m.content;
        text = "# " + line_after(outline, "Title: ") + "\n";
        static const std::regex item_re(R"(^\d+\. ([^:]+).*$)");
        std::size_t start = 0;
        while (start < outline.size()) {
            auto end = outline.find('\n', start);
            if (end == std::string::npos) end = outline.size();
            const std::string line = outline.substr(start, end - start);
            start = end + 1;
            std::smatch m;
            if (!std::regex_match(line, m, item_re)) continue;
            const auto heading = trim(m[1].str());
            text += "\n## " + heading + "\n\n" + heading + " is discussed here in general terms.\n";
        }
    } else {
        return stub_complete(request);
    }
    ChatResponse response;
    response.text = std::move(text);
    response.prompt_tokens = 0;
    for (const auto& m : request.messages) response.prompt_tokens += static_cast<std::int64_t>(m.content.size() / 4);
    response.completion_tokens = static_cast<std::int64_t>(response.text.size() / 4);
    response.latency_ms = latency_ms_;
    return response;
}

}  // namespace knowpilot
