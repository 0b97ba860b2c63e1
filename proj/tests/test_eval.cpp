#include <doctest.h>

#include "knowpilot/errors.hpp"
#include "knowpilot/eval.hpp"
#include "support.hpp"

using namespace knowpilot;

namespace {

std::shared_ptr<StubBackend> judge_stub(const std::string& outline, const std::string& content,
                                        const std::string& fluency, const std::string& structure) {
    auto stub = std::make_shared<StubBackend>();
    stub->script("judge_outline", outline);
    stub->script("judge_content", content);
    stub->script("judge_fluency", fluency);
    stub->script("judge_structure", structure);
    return stub;
}

EvalRow row(double t, double o, double c, double f, double s, bool valid = true) {
    EvalRow r;
    r.method = "m";
    r.valid = valid;
    r.time_score = t;
    r.outline_score = o;
    r.content = c;
    r.fluency = f;
    r.structure = s;
    return r;
}

struct FailingRunner final : MethodRunner {
    std::string name() const override { return "broken"; }
    MethodOutput run(const EvalTopic& topic) override {
        if (topic.topic_id == "t2") throw EndpointUnavailable("down");
        return {"1. A", "Article.", 1.0};
    }
};

}  // namespace

TEST_CASE("score line parsing") {
    CHECK(parse_score_line("Reasoning.\nSCORE: 4") == 4.0);
    CHECK(parse_score_line("score: 2\nlater SCORE: 3") == 3.0);
    CHECK(parse_score_line("SCORE: **5**") == 5.0);
    CHECK(parse_score_line("SCORE: 7") == 7.0);
    CHECK(!parse_score_line("I'd give it four"));
}

TEST_CASE("judge clamps out-of-range scores and flags them") {
    auto stub = std::make_shared<StubBackend>();
    stub->script("judge_outline", "Great.\nSCORE: 7");
    LlmGateway gateway(stub);
    const auto templates = TemplateSet::builtin();
    const auto s = judge_outline(gateway, templates, "1. A", "topic");
    CHECK(s.value == 5.0);
    CHECK(s.clamped);
    stub->script("judge_outline", "SCORE: 0");
    CHECK(judge_outline(gateway, templates, "1. A", "topic").value == 1.0);
    stub->script("judge_outline", "SCORE: 3");
    const auto plain = judge_outline(gateway, templates, "1. A", "topic");
    CHECK(plain.value == 3.0);
    CHECK(!plain.clamped);
    CHECK(stub->received("judge_outline").back().temperature == 0.0);
}

TEST_CASE("judge retries once, then fails") {
    auto stub = std::make_shared<StubBackend>();
    stub->script("judge_content", std::vector<StubReply>{{"no score", 0}, {"SCORE: 2", 0}});
    LlmGateway gateway(stub);
    const auto templates = TemplateSet::builtin();
    const auto s = judge(gateway, templates, "judge_content", {{"topic", "t"}, {"article", "a"}});
    CHECK(s.value == 2.0);
    CHECK(s.attempts == 2);

    auto never = std::make_shared<StubBackend>();
    never->script("judge_content", "fine work");
    CHECK_THROWS_AS(judge(LlmGateway(never), templates, "judge_content", {{"topic", "t"}, {"article", "a"}}),
                    JudgeParseFailure);
    CHECK(never->calls("judge_content") == 2);
}

TEST_CASE("article judging uses one call per rubric, each with its own rubric text") {
    auto stub = judge_stub("SCORE: 1", "SCORE: 4", "SCORE: 3", "SCORE: 2");
    LlmGateway gateway(stub);
    const auto templates = TemplateSet::builtin();
    const auto scores = judge_article(gateway, templates, "The article.", "heart failure");
    CHECK(scores.content.value == 4.0);
    CHECK(scores.fluency.value == 3.0);
    CHECK(scores.structure.value == 2.0);
    const auto order = stub->received();
    REQUIRE(order.size() == 3);
    CHECK(order[0].request_tag == "judge_content");
    CHECK(order[1].request_tag == "judge_fluency");
    CHECK(order[2].request_tag == "judge_structure");
    for (const auto& r : order) {
        REQUIRE(r.messages.size() == 1);
        CHECK(r.messages[0].content == templates.render(r.request_tag, {{"topic", "heart failure"}, {"article", "The article."}}));
    }
    CHECK(order[0].messages[0].content != order[1].messages[0].content);
    CHECK_THROWS_AS(judge_article(gateway, templates, "  ", "t"), PreconditionViolation);
}

TEST_CASE("means are arithmetic over valid rows") {
    const auto m = compute_means({row(1, 3, 3, 3, 3), row(2, 4, 4, 4, 4), row(100, 1, 1, 1, 1, false)});
    CHECK(m.outline_score == doctest::Approx(3.5));
    CHECK(m.time_score == doctest::Approx(1.5));
    EvalReport report;
    report.method = "x";
    report.rows = {row(1, 3, 3, 3, 3), row(2, 4, 4, 4, 4)};
    report.valid_rows = 2;
    report.means = compute_means(report.rows);
    CHECK(report_csv({report}) == "Method,Time Score,Outline Score,Content,Fluency,Structure\nx,1.50,3.50,3.50,3.50,3.50\n");
}

TEST_CASE("time score: 1.2 + 3.3 + 0.5 s of model time and 10 + 20 s of waiting is 35.00") {
    auto stub = kptest::scripted_stub(1);
    stub->script("parse_priors", std::vector<StubReply>{{kptest::kConfigReply, 1200}});
    stub->script("outline", std::vector<StubReply>{{kptest::outline_reply(1), 3300}});
    stub->script("section", std::vector<StubReply>{{"Draft.", 500}});
    auto h = kptest::make_harness({}, stub, {}, 7, 0);
    auto& p = *h.pipeline;
    h.clock->set(0);
    const auto sid = p.create_session().session_id;
    h.clock->set(10'000);
    p.parse_priors(sid, "brief");
    h.clock->set(10'000 + 1'200 + 20'000);
    p.generate_outline(sid);
    h.clock->set(31'200 + 3'300);
    p.retrieve_for_section(sid, "sec-1");
    p.generate_section(sid, "sec-1");
    CHECK_THROWS_AS(time_score(p.session(sid)), SessionIncomplete);
    h.clock->set(34'500 + 500);
    p.submit_user_action(sid, "sec-1", UserAction::accept());
    CHECK(time_score(p.session(sid)) == 35.00);
    CHECK(round2(35.004) == 35.00);
    CHECK(round2(1.005 + 1e-9) == 1.01);
}

TEST_CASE("comparison: chatbot and pipeline rows, columns, failing rows kept") {
    auto judge = judge_stub("SCORE: 3", "SCORE: 4", "SCORE: 9", "SCORE: 2");
    LlmGateway judge_gateway(judge);
    const auto templates = TemplateSet::builtin();

    auto h = kptest::make_harness({});
    auto pipeline = std::make_shared<PipelineRunner>(h.pipeline);
    auto chat_stub = std::make_shared<StubBackend>();
    chat_stub->script("chatbot_outline", std::vector<StubReply>{{"1. Intro\n2. Body", 1500}});
    chat_stub->script("chatbot_article", std::vector<StubReply>{{"# Article\n\nText.", 2250}});
    auto chatbot = std::make_shared<ChatbotRunner>(std::make_shared<LlmGateway>(chat_stub), templates);
    const std::vector<EvalTopic> topics{{"t1", "medicine", "write about heart failure"},
                                        {"t2", "medicine", "write about arrhythmia"}};

    const auto reports = run_comparison({pipeline, chatbot, std::make_shared<FailingRunner>()}, topics,
                                        judge_gateway, templates, {2});
    REQUIRE(reports.size() == 3);
    CHECK(reports[0].method == "knowpilot");
    CHECK(reports[1].method == "chatbot");
    for (std::size_t m = 0; m < 2; ++m) {
        CHECK(reports[m].valid_rows == 2);
        REQUIRE(reports[m].means);
        CHECK(reports[m].means->outline_score == 3.0);
        CHECK(reports[m].means->fluency == 5.0);
        CHECK(reports[m].rows[0].clamped == std::vector<std::string>{"Fluency"});
        CHECK(reports[m].rows[0].topic_id == "t1");
    }
    CHECK(reports[1].means->time_score == doctest::Approx(3.75));
    CHECK(reports[0].means->time_score > 0);
    CHECK(reports[2].valid_rows == 1);
    CHECK(!reports[2].rows[1].valid);
    CHECK(reports[2].rows[1].error.rfind("endpoint_unavailable: ", 0) == 0);

    const auto csv = report_csv(reports);
    CHECK(csv.rfind("Method,Time Score,Outline Score,Content,Fluency,Structure\n", 0) == 0);
    CHECK(csv.find("\nchatbot,3.75,3.00,4.00,5.00,2.00\n") != std::string::npos);
    const auto json = report_json(reports);
    CHECK(json["columns"] == Json({"Time Score", "Outline Score", "Content", "Fluency", "Structure"}));
    CHECK(json["reports"][2]["rows"][1]["valid"] == false);
    CHECK(rows_csv(reports).find("broken,t2,,,,,,false,") != std::string::npos);
    const auto table = report_table(reports);
    CHECK(table.find("Outline Score") != std::string::npos);
    CHECK(table.find("1/2") != std::string::npos);

    // A method with no valid rows reports n/a rather than zeros.
    EvalReport empty;
    empty.method = "none";
    CHECK(report_csv({empty}).find("none,n/a,n/a,n/a,n/a,n/a") != std::string::npos);
    CHECK_THROWS_AS(run_comparison({}, topics, judge_gateway, templates), PreconditionViolation);
}

TEST_CASE("topic and external output files") {
    kptest::TempDir dir;
    write_file_atomic(dir / "topics.jsonl", "{\"topic_id\": \"a\", \"brief\": \"x\"}\n{\"topic_id\": \"b\", \"brief\": \"y\"}\n");
    const auto topics = load_topics(dir / "topics.jsonl");
    REQUIRE(topics.size() == 2);
    CHECK(topics[1].brief == "y");
    write_file_atomic(dir / "dup.jsonl", "{\"topic_id\": \"a\", \"brief\": \"x\"}\n{\"topic_id\": \"a\", \"brief\": \"y\"}\n");
    CHECK_THROWS_AS(load_topics(dir / "dup.jsonl"), ValidationError);
    write_file_atomic(dir / "empty.jsonl", "{\"topic_id\": \"a\", \"brief\": \" \"}\n");
    CHECK_THROWS_AS(load_topics(dir / "empty.jsonl"), ValidationError);
    CHECK_THROWS_AS(load_topics(dir / "missing.jsonl"), NotFound);

    write_file_atomic(dir / "ext.jsonl", R"({"topic_id": "a", "outline": "1. A", "article": "Text", "time_score": 12.5})"
                                         "\n");
    ExternalRunner external("storm", dir / "ext.jsonl");
    CHECK(external.run(topics[0]).time_score == 12.5);
    CHECK_THROWS_AS(external.run(topics[1]), NotFound);
}
