#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "knowpilot/domain.hpp"
#include "knowpilot/fusion.hpp"
#include "knowpilot/llm_gateway.hpp"

namespace knowpilot {

class Pipeline;

struct EvalTopic {
    std::string topic_id;
    std::string domain_label;
    std::string brief;

    bool operator==(const EvalTopic&) const = default;
};

void to_json(Json& j, const EvalTopic& v);
void from_json(const Json& j, EvalTopic& v);

/// JSONL, one topic per line. Throws ValidationError for an empty brief or a
/// repeated topic_id.
std::vector<EvalTopic> load_topics(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Judging

inline constexpr double kMinScore = 1.0;
inline constexpr double kMaxScore = 5.0;

struct JudgeScore {
    double value = 0.0;
    /// The parsed value lay outside [1, 5] and was clamped.
    bool clamped = false;
    int attempts = 1;
    std::int64_t latency_ms = 0;
};

/// Value of the last "SCORE: <n>" line, unclamped.
std::optional<double> parse_score_line(std::string_view text);

/// Judge call under `rubric_template` (one of judge_outline, judge_content,
/// judge_fluency, judge_structure; also the request tag). An unparseable
/// reply is retried once, then JudgeParseFailure.
JudgeScore judge(const LlmGateway& gateway, const TemplateSet& templates, const std::string& rubric_template,
                 const std::map<std::string, std::string>& bindings);

JudgeScore judge_outline(const LlmGateway& gateway, const TemplateSet& templates, const std::string& outline_text,
                         const std::string& topic);

struct ArticleScores {
    JudgeScore content;
    JudgeScore fluency;
    JudgeScore structure;
};

/// Three independent calls, in the order content, fluency, structure.
ArticleScores judge_article(const LlmGateway& gateway, const TemplateSet& templates, const std::string& article,
                            const std::string& topic);

/// Session clock in seconds, rounded to 2 decimals. Throws SessionIncomplete.
double time_score(const Session& session);

double round2(double value);

// ---------------------------------------------------------------------------
// Methods

struct MethodOutput {
    std::string outline;
    std::string article;
    double time_score = 0.0;
};

class MethodRunner {
public:
    virtual ~MethodRunner() = default;
    virtual std::string name() const = 0;
    /// Called concurrently for distinct topics.
    virtual MethodOutput run(const EvalTopic& topic) = 0;
};

/// Full pipeline with every draft auto-accepted.
class PipelineRunner final : public MethodRunner {
public:
    explicit PipelineRunner(std::shared_ptr<Pipeline> pipeline, std::string name = "knowpilot");
    std::string name() const override { return name_; }
    MethodOutput run(const EvalTopic& topic) override;

private:
    std::shared_ptr<Pipeline> pipeline_;
    std::string name_;
};

/// Two-turn conversation: outline, then the article. No retrieval, no
/// experience. Time is the sum of model latencies.
class ChatbotRunner final : public MethodRunner {
public:
    ChatbotRunner(std::shared_ptr<const LlmGateway> gateway, TemplateSet templates, std::string name = "chatbot");
    std::string name() const override { return name_; }
    MethodOutput run(const EvalTopic& topic) override;

private:
    std::shared_ptr<const LlmGateway> gateway_;
    TemplateSet templates_;
    std::string name_;
};

/// Precomputed outputs of an outside system, JSONL of
/// {"topic_id", "outline", "article", "time_score"}.
class ExternalRunner final : public MethodRunner {
public:
    ExternalRunner(std::string name, const std::filesystem::path& outputs);
    std::string name() const override { return name_; }
    MethodOutput run(const EvalTopic& topic) override;

private:
    std::string name_;
    std::map<std::string, MethodOutput> outputs_;
};

// ---------------------------------------------------------------------------
// Comparison

struct EvalRow {
    std::string method;
    std::string topic_id;
    bool valid = true;
    std::string error;
    double time_score = 0.0;
    double outline_score = 0.0;
    double content = 0.0;
    double fluency = 0.0;
    double structure = 0.0;
    /// Names of the dimensions whose judge value was clamped.
    std::vector<std::string> clamped;
};

struct EvalMeans {
    double time_score = 0.0;
    double outline_score = 0.0;
    double content = 0.0;
    double fluency = 0.0;
    double structure = 0.0;
};

struct EvalReport {
    std::string method;
    std::vector<EvalRow> rows;
    std::size_t valid_rows = 0;
    /// Arithmetic means over valid rows; nullopt when there are none.
    std::optional<EvalMeans> means;
};

void to_json(Json& j, const EvalRow& v);
void to_json(Json& j, const EvalReport& v);

/// Column names of the report layout.
inline constexpr const char* kReportColumns[] = {"Time Score", "Outline Score", "Content", "Fluency", "Structure"};

struct ComparisonOptions {
    int parallelism = 1;
};

/// Runs every method on every topic and judges the outputs. A failing row is
/// kept with valid=false and the run continues. Reports follow the method
/// order; rows follow the topic order.
std::vector<EvalReport> run_comparison(const std::vector<std::shared_ptr<MethodRunner>>& methods,
                                       const std::vector<EvalTopic>& topics, const LlmGateway& judge_gateway,
                                       const TemplateSet& templates, const ComparisonOptions& options = {});

EvalMeans compute_means(const std::vector<EvalRow>& rows);

/// One line per method: "Method" followed by the report columns, 2 decimals.
std::string report_csv(const std::vector<EvalReport>& reports);
/// Per-row CSV with method and topic_id columns.
std::string rows_csv(const std::vector<EvalReport>& reports);
Json report_json(const std::vector<EvalReport>& reports);
std::string report_table(const std::vector<EvalReport>& reports);

}  // namespace knowpilot
