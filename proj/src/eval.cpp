#include "knowpilot/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <regex>
#include <set>
#include <thread>

#include <spdlog/spdlog.h>

#include "knowpilot/errors.hpp"
#include "knowpilot/pipeline.hpp"

namespace knowpilot {

void to_json(Json& j, const EvalTopic& v) {
    j = Json{{"topic_id", v.topic_id}, {"domain_label", v.domain_label}, {"brief", v.brief}};
}

void from_json(const Json& j, EvalTopic& v) {
    v.topic_id = j.at("topic_id").get<std::string>();
    v.domain_label = j.value("domain_label", std::string());
    v.brief = j.at("brief").get<std::string>();
}

std::vector<EvalTopic> load_topics(const std::filesystem::path& path) {
    if (!std::filesystem::is_regular_file(path)) throw NotFound("topic file " + path.string() + " not found");
    std::vector<EvalTopic> topics;
    std::set<std::string> ids;
    for (const auto& line : read_jsonl(path)) {
        EvalTopic topic;
        try {
            topic = line.get<EvalTopic>();
        } catch (const Json::exception& e) {
            throw ValidationError("topic file " + path.string() + ": " + e.what());
        }
        if (trim(topic.brief).empty()) throw ValidationError("topic " + topic.topic_id + " has an empty brief");
        if (!ids.insert(topic.topic_id).second) throw ValidationError("topic " + topic.topic_id + " is listed twice");
        topics.push_back(std::move(topic));
    }
    return topics;
}

// ---------------------------------------------------------------------------

std::optional<double> parse_score_line(std::string_view text) {
    static const std::regex score_re(R"(SCORE\s*:\s*\**\s*(-?\d+(?:\.\d+)?))", std::regex::icase);
    const std::string s(text);
    std::optional<double> found;
    for (std::sregex_iterator it(s.begin(), s.end(), score_re), end; it != end; ++it) found = std::stod((*it)[1].str());
    return found;
}

JudgeScore judge(const LlmGateway& gateway, const TemplateSet& templates, const std::string& rubric_template,
                 const std::map<std::string, std::string>& bindings) {
    ChatRequest request;
    request.request_tag = rubric_template;
    request.temperature = kParsingTemperature;
    request.messages = {{"user", templates.render(rubric_template, bindings)}};
    JudgeScore score;
    for (score.attempts = 1; score.attempts <= 2; ++score.attempts) {
        const auto reply = gateway.complete(request);
        score.latency_ms += reply.latency_ms;
        if (const auto value = parse_score_line(reply.text)) {
            score.clamped = *value < kMinScore || *value > kMaxScore;
            score.value = std::clamp(*value, kMinScore, kMaxScore);
            if (score.clamped) spdlog::warn("{}: judge score {} clamped to {}", rubric_template, *value, score.value);
            return score;
        }
        request.messages.push_back({"assistant", reply.text.empty() ? "(empty)" : reply.text});
        request.messages.push_back({"user", "Your reply had no score line. End with a line of the form \"SCORE: <n>\" "
                                            "where n is an integer from 1 to 5."});
    }
    throw JudgeParseFailure(rubric_template + ": no \"SCORE: <n>\" line after one retry");
}

JudgeScore judge_outline(const LlmGateway& gateway, const TemplateSet& templates, const std::string& outline_text,
                         const std::string& topic) {
    if (trim(outline_text).empty()) throw PreconditionViolation("outline is empty");
    return judge(gateway, templates, "judge_outline", {{"topic", topic}, {"outline", outline_text}});
}

ArticleScores judge_article(const LlmGateway& gateway, const TemplateSet& templates, const std::string& article,
                            const std::string& topic) {
    if (trim(article).empty()) throw PreconditionViolation("article is empty");
    const std::map<std::string, std::string> bindings{{"topic", topic}, {"article", article}};
    ArticleScores scores;
    scores.content = judge(gateway, templates, "judge_content", bindings);
    scores.fluency = judge(gateway, templates, "judge_fluency", bindings);
    scores.structure = judge(gateway, templates, "judge_structure", bindings);
    return scores;
}

double round2(double value) { return std::round(value * 100.0) / 100.0; }

double time_score(const Session& session) {
    if (session.state != SessionState::complete)
        throw SessionIncomplete("session " + session.session_id + " is " + to_string(session.state));
    return round2(static_cast<double>(session.clock_ms) / 1000.0);
}

// ---------------------------------------------------------------------------

PipelineRunner::PipelineRunner(std::shared_ptr<Pipeline> pipeline, std::string name)
    : pipeline_(std::move(pipeline)), name_(std::move(name)) {
    if (!pipeline_) throw PreconditionViolation("pipeline runner needs a pipeline");
}

MethodOutput PipelineRunner::run(const EvalTopic& topic) {
    const auto id = pipeline_->create_session().session_id;
    pipeline_->parse_priors(id, topic.brief);
    pipeline_->generate_outline(id);
    const auto session = pipeline_->draft_all_sections(id, true);
    MethodOutput out;
    out.outline = session.outline->title + "\n" + describe_outline(*session.outline);
    out.article = pipeline_->export_markdown(id);
    out.time_score = time_score(session);
    return out;
}

ChatbotRunner::ChatbotRunner(std::shared_ptr<const LlmGateway> gateway, TemplateSet templates, std::string name)
    : gateway_(std::move(gateway)), templates_(std::move(templates)), name_(std::move(name)) {
    if (!gateway_) throw PreconditionViolation("chatbot runner needs a gateway");
}

MethodOutput ChatbotRunner::run(const EvalTopic& topic) {
    ChatRequest request;
    request.request_tag = "chatbot_outline";
    request.messages = {{"user", templates_.render("chatbot_outline", {{"brief", topic.brief}})}};
    const auto outline = gateway_->complete(request);
    request.request_tag = "chatbot_article";
    request.messages.push_back({"assistant", outline.text});
    request.messages.push_back({"user", templates_.render("chatbot_article", {})});
    const auto article = gateway_->complete(request);
    MethodOutput out;
    out.outline = outline.text;
    out.article = article.text;
    out.time_score = round2(static_cast<double>(outline.latency_ms + article.latency_ms) / 1000.0);
    return out;
}

ExternalRunner::ExternalRunner(std::string name, const std::filesystem::path& outputs) : name_(std::move(name)) {
    if (!std::filesystem::is_regular_file(outputs)) throw NotFound("method output file " + outputs.string() + " not found");
    for (const auto& line : read_jsonl(outputs)) {
        try {
            MethodOutput out;
            out.outline = line.at("outline").get<std::string>();
            out.article = line.at("article").get<std::string>();
            out.time_score = line.at("time_score").get<double>();
            outputs_[line.at("topic_id").get<std::string>()] = std::move(out);
        } catch (const Json::exception& e) {
            throw ValidationError("method output file " + outputs.string() + ": " + e.what());
        }
    }
}

MethodOutput ExternalRunner::run(const EvalTopic& topic) {
    auto it = outputs_.find(topic.topic_id);
    if (it == outputs_.end()) throw NotFound(name_ + " has no output for topic " + topic.topic_id);
    if (it->second.time_score < 0) throw ValidationError(name_ + " reports a negative time for " + topic.topic_id);
    return it->second;
}

// ---------------------------------------------------------------------------

void to_json(Json& j, const EvalRow& v) {
    j = Json{{"method", v.method}, {"topic_id", v.topic_id}, {"valid", v.valid}};
    if (!v.valid) {
        j["error"] = v.error;
        return;
    }
    j["Time Score"] = v.time_score;
    j["Outline Score"] = v.outline_score;
    j["Content"] = v.content;
    j["Fluency"] = v.fluency;
    j["Structure"] = v.structure;
    j["clamped"] = v.clamped;
}

void to_json(Json& j, const EvalReport& v) {
    j = Json{{"method", v.method}, {"rows", v.rows}, {"valid_rows", v.valid_rows}};
    if (v.means) {
        j["means"] = Json{{"Time Score", v.means->time_score},
                          {"Outline Score", v.means->outline_score},
                          {"Content", v.means->content},
                          {"Fluency", v.means->fluency},
                          {"Structure", v.means->structure}};
    } else {
        j["means"] = nullptr;
    }
}

EvalMeans compute_means(const std::vector<EvalRow>& rows) {
    EvalMeans m;
    std::size_t n = 0;
    for (const auto& r : rows) {
        if (!r.valid) continue;
        ++n;
        m.time_score += r.time_score;
        m.outline_score += r.outline_score;
        m.content += r.content;
        m.fluency += r.fluency;
        m.structure += r.structure;
    }
    if (n == 0) return m;
    const auto d = static_cast<double>(n);
    return {m.time_score / d, m.outline_score / d, m.content / d, m.fluency / d, m.structure / d};
}

namespace {

EvalRow evaluate(MethodRunner& method, const EvalTopic& topic, const LlmGateway& judge_gateway,
                 const TemplateSet& templates) {
    EvalRow row;
    row.method = method.name();
    row.topic_id = topic.topic_id;
    try {
        const auto output = method.run(topic);
        const auto outline = judge_outline(judge_gateway, templates, output.outline, topic.brief);
        const auto article = judge_article(judge_gateway, templates, output.article, topic.brief);
        row.time_score = output.time_score;
        row.outline_score = outline.value;
        row.content = article.content.value;
        row.fluency = article.fluency.value;
        row.structure = article.structure.value;
        if (outline.clamped) row.clamped.push_back("Outline Score");
        if (article.content.clamped) row.clamped.push_back("Content");
        if (article.fluency.clamped) row.clamped.push_back("Fluency");
        if (article.structure.clamped) row.clamped.push_back("Structure");
    } catch (const std::exception& e) {
        spdlog::warn("{} / {}: {}", row.method, row.topic_id, e.what());
        row.valid = false;
        const auto* domain = dynamic_cast<const Error*>(&e);
        row.error = (domain ? domain->code() + ": " : std::string("internal_error: ")) + e.what();
    }
    return row;
}

std::string fixed2(double value) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", value);
    return buf;
}

std::vector<std::string> mean_cells(const EvalReport& report) {
    if (!report.means) return {"n/a", "n/a", "n/a", "n/a", "n/a"};
    const auto& m = *report.means;
    return {fixed2(m.time_score), fixed2(m.outline_score), fixed2(m.content), fixed2(m.fluency), fixed2(m.structure)};
}

std::string csv_field(const std::string& text) {
    if (text.find_first_of(",\"\n") == std::string::npos) return text;
    std::string out = "\"";
    for (char c : text) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::vector<EvalReport> run_comparison(const std::vector<std::shared_ptr<MethodRunner>>& methods,
                                       const std::vector<EvalTopic>& topics, const LlmGateway& judge_gateway,
                                       const TemplateSet& templates, const ComparisonOptions& options) {
    if (methods.empty()) throw PreconditionViolation("comparison needs at least one method");
    if (topics.empty()) throw PreconditionViolation("comparison needs at least one topic");
    for (const auto& m : methods)
        if (!m) throw PreconditionViolation("comparison method is null");

    const std::size_t total = methods.size() * topics.size();
    std::vector<EvalRow> rows(total);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < total;)
            rows[i] = evaluate(*methods[i / topics.size()], topics[i % topics.size()], judge_gateway, templates);
    };
    const auto threads = static_cast<std::size_t>(std::clamp<int>(options.parallelism, 1, 64));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < std::min(threads, total); ++t) pool.emplace_back(worker);
    }

    std::vector<EvalReport> reports;
    for (std::size_t m = 0; m < methods.size(); ++m) {
        EvalReport report;
        report.method = methods[m]->name();
        report.rows.assign(rows.begin() + static_cast<std::ptrdiff_t>(m * topics.size()),
                           rows.begin() + static_cast<std::ptrdiff_t>((m + 1) * topics.size()));
        report.valid_rows = static_cast<std::size_t>(
            std::count_if(report.rows.begin(), report.rows.end(), [](const EvalRow& r) { return r.valid; }));
        if (report.valid_rows > 0) report.means = compute_means(report.rows);
        reports.push_back(std::move(report));
    }
    return reports;
}

std::string report_csv(const std::vector<EvalReport>& reports) {
    std::string out = "Method";
    for (const char* column : kReportColumns) out += std::string(",") + column;
    out += "\n";
    for (const auto& r : reports) {
        out += csv_field(r.method);
        for (const auto& cell : mean_cells(r)) out += "," + cell;
        out += "\n";
    }
    return out;
}

std::string rows_csv(const std::vector<EvalReport>& reports) {
    std::string out = "Method,Topic";
    for (const char* column : kReportColumns) out += std::string(",") + column;
    out += ",Valid,Error\n";
    for (const auto& report : reports) {
        for (const auto& row : report.rows) {
            out += csv_field(row.method) + "," + csv_field(row.topic_id);
            if (row.valid) {
                for (double v : {row.time_score, row.outline_score, row.content, row.fluency, row.structure})
                    out += "," + fixed2(v);
                out += ",true,\n";
            } else {
                out += ",,,,,,false," + csv_field(row.error) + "\n";
            }
        }
    }
    return out;
}

Json report_json(const std::vector<EvalReport>& reports) {
    return Json{{"columns", Json(std::vector<std::string>(std::begin(kReportColumns), std::end(kReportColumns)))},
                {"reports", reports}};
}

std::string report_table(const std::vector<EvalReport>& reports) {
    std::vector<std::vector<std::string>> cells;
    std::vector<std::string> header{"Method"};
    header.insert(header.end(), std::begin(kReportColumns), std::end(kReportColumns));
    header.push_back("Valid");
    cells.push_back(header);
    for (const auto& r : reports) {
        std::vector<std::string> line{r.method};
        for (auto& c : mean_cells(r)) line.push_back(std::move(c));
        line.push_back(std::to_string(r.valid_rows) + "/" + std::to_string(r.rows.size()));
        cells.push_back(std::move(line));
    }
    std::vector<std::size_t> widths(header.size(), 0);
    for (const auto& line : cells)
        for (std::size_t i = 0; i < line.size(); ++i) widths[i] = std::max(widths[i], line[i].size());
    std::string out;
    for (std::size_t row = 0; row < cells.size(); ++row) {
        for (std::size_t i = 0; i < cells[row].size(); ++i) {
            const auto& cell = cells[row][i];
            const auto pad = std::string(widths[i] - cell.size(), ' ');
            out += i == 0 ? cell + pad : "  " + pad + cell;
        }
        out += "\n";
        if (row == 0) {
            std::size_t width = 0;
            for (auto w : widths) width += w + 2;
            out += std::string(width - 2, '-') + "\n";
        }
    }
    return out;
}

}  // namespace knowpilot
