#include <doctest.h>

#include <sys/wait.h>

#include "knowpilot/knowledge_store.hpp"
#include "support.hpp"

using namespace knowpilot;

namespace {

struct Run {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
    return out + "'";
}

/// Runs the CLI with a clean model environment.
Run cli(const kptest::TempDir& scratch, const std::string& args) {
    static int n = 0;
    const auto out = scratch / ("out" + std::to_string(n));
    const auto err = scratch / ("err" + std::to_string(n++));
    const std::string cmd = "env -u KNOWPILOT_LLM_BASE_URL -u KNOWPILOT_SEARCH_API_KEY -u KNOWPILOT_EMBED_BASE_URL " +
                            quote(KNOWPILOT_CLI) + " " + args + " >" + quote(out.string()) + " 2>" + quote(err.string());
    const int status = std::system(cmd.c_str());
    Run r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = kptest::read_text(out);
    r.err = kptest::read_text(err);
    return r;
}

std::string data(const kptest::TempDir& dir) { return "--offline --data-dir " + quote((dir / "data").string()); }

const char* kDoc =
    "Heart failure is a clinical syndrome. Beta blockers reduce mortality. Loop diuretics relieve congestion. "
    "Device therapy prevents sudden death in selected patients.";

}  // namespace

TEST_CASE("usage errors exit 2") {
    kptest::TempDir dir;
    CHECK(cli(dir, "").exit_code == 2);
    CHECK(cli(dir, "session").exit_code == 2);
    CHECK(cli(dir, "--no-such-flag ingest x").exit_code == 2);
    CHECK(cli(dir, data(dir) + " session new").exit_code == 2);
    CHECK(cli(dir, data(dir) + " session config abc 'not json'").exit_code == 2);
    CHECK(cli(dir, data(dir) + " serve --bind nohost").exit_code == 2);
    CHECK(cli(dir, "--help").exit_code == 0);
}

TEST_CASE("ingest prints the chunk count per document") {
    kptest::TempDir dir;
    write_file_atomic(dir / "docs" / "hf.md", kDoc);
    std::string long_doc;
    for (int i = 0; i < 40; ++i) long_doc += "Sentence number " + std::to_string(i) + " about cardiac care. ";
    write_file_atomic(dir / "docs" / "long.txt", long_doc);
    write_file_atomic(dir / "docs" / "skip.bin", "ignored");

    const auto r = cli(dir, data(dir) + " ingest " + quote((dir / "docs").string()));
    CAPTURE(r.err);
    REQUIRE(r.exit_code == 0);
    KnowledgeStore reference({}, std::make_shared<HashingEmbedder>(), Runtime::deterministic(1));
    const auto expect_hf = reference.ingest_document({"a", "", kDoc, "", 0}).size();
    const auto expect_long = reference.ingest_document({"b", "", long_doc, "", 0}).size();
    CHECK(expect_long > 1);
    CHECK(r.out.find("hf.md\t" + std::to_string(expect_hf) + " chunks\n") != std::string::npos);
    CHECK(r.out.find("long.txt\t" + std::to_string(expect_long) + " chunks\n") != std::string::npos);
    CHECK(r.out.find("skip.bin") == std::string::npos);

    // Same document again is a domain error.
    CHECK(cli(dir, data(dir) + " ingest " + quote((dir / "docs" / "hf.md").string())).exit_code == 1);
    CHECK(cli(dir, data(dir) + " ingest /no/such/file").exit_code == 1);
}

TEST_CASE("without a model endpoint the CLI refuses to run online") {
    kptest::TempDir dir;
    const auto r = cli(dir, "--data-dir " + quote((dir / "d").string()) + " session new --brief x");
    CHECK(r.exit_code == 1);
    CHECK(r.err.find("KNOWPILOT_LLM_BASE_URL") != std::string::npos);
}

TEST_CASE("session commands; export of an incomplete session exits 1") {
    kptest::TempDir dir;
    const auto created = cli(dir, data(dir) + " session new --brief " +
                                      quote("write as a cardiologist, formal tone, 3 sections about heart failure"));
    CAPTURE(created.err);
    REQUIRE(created.exit_code == 0);
    const auto id = Json::parse(created.out)["session_id"].get<std::string>();
    CHECK(cli(dir, data(dir) + " session list").out == id + "\n");
    CHECK(cli(dir, data(dir) + " session outline " + id).exit_code == 0);

    const auto incomplete = cli(dir, data(dir) + " session export " + id);
    CHECK(incomplete.exit_code == 1);
    CHECK(incomplete.err.find("session_incomplete") != std::string::npos);

    CHECK(cli(dir, data(dir) + " session config " + id + " " + quote(R"({"style":"casual"})")).exit_code == 0);
    CHECK(cli(dir, data(dir) + " session write " + id).exit_code == 0);
    const auto show = Json::parse(cli(dir, data(dir) + " session show " + id).out);
    CHECK(show["state"] == "drafting");
    const auto first = show["outline"]["sections"][0]["id"].get<std::string>();
    CHECK(cli(dir, data(dir) + " session action " + id + " " + first + " " + quote(R"({"kind":"accept"})")).exit_code == 0);
    CHECK(cli(dir, data(dir) + " session action " + id + " " + first + " " + quote(R"({"kind":"accept"})")).exit_code == 1);
    CHECK(cli(dir, data(dir) + " session show missing").exit_code == 1);
}

TEST_CASE("write --auto-accept gives identical exports across runs with the same seed") {
    std::array<std::string, 2> exports;
    for (auto& exported : exports) {
        kptest::TempDir dir;
        write_file_atomic(dir / "hf.md", kDoc);
        const auto opts = data(dir) + " --seed 42";
        REQUIRE(cli(dir, opts + " ingest " + quote((dir / "hf.md").string())).exit_code == 0);
        const auto created = cli(dir, opts + " session new --brief " + quote("a nurse explains heart failure care"));
        REQUIRE(created.exit_code == 0);
        const auto id = Json::parse(created.out)["session_id"].get<std::string>();
        REQUIRE(cli(dir, opts + " session outline " + id).exit_code == 0);
        const auto written = cli(dir, opts + " session write --auto-accept " + id);
        REQUIRE(written.exit_code == 0);
        CHECK(written.out.find("state: complete") != std::string::npos);
        const auto out = dir / "article.md";
        REQUIRE(cli(dir, opts + " session export " + id + " --out " + quote(out.string())).exit_code == 0);
        exported = kptest::read_text(out);
        CHECK(exported.find("## Sources") != std::string::npos);
    }
    CHECK(!exports[0].empty());
    CHECK(exports[0] == exports[1]);
}

TEST_CASE("a seeded data directory never reuses ids across invocations") {
    kptest::TempDir dir;
    const auto opts = data(dir) + " --seed 42";
    const auto a = cli(dir, opts + " session new --brief " + quote("a nurse explains heart failure care"));
    const auto b = cli(dir, opts + " session new --brief " + quote("a nurse explains heart failure care"));
    REQUIRE(a.exit_code == 0);
    REQUIRE(b.exit_code == 0);
    CHECK(Json::parse(a.out)["session_id"] != Json::parse(b.out)["session_id"]);
    CHECK(cli(dir, opts + " session list").out.size() > 1);
    write_file_atomic(dir / "data" / "id-epoch", "garbage");
    CHECK(cli(dir, opts + " session list").exit_code == 1);
}

TEST_CASE("eval run writes reports") {
    kptest::TempDir dir;
    write_file_atomic(dir / "topics.jsonl",
                      "{\"topic_id\": \"hf\", \"domain_label\": \"medicine\", \"brief\": \"write about heart failure\"}\n");
    const auto r = cli(dir, data(dir) + " eval run --topics " + quote((dir / "topics.jsonl").string()) +
                                " --methods knowpilot,chatbot --out-dir " + quote((dir / "report").string()));
    CAPTURE(r.err);
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("Outline Score") != std::string::npos);
    const auto csv = kptest::read_text(dir / "report" / "report.csv");
    CHECK(csv.rfind("Method,Time Score,Outline Score,Content,Fluency,Structure\n", 0) == 0);
    CHECK(csv.find("\nknowpilot,") != std::string::npos);
    CHECK(csv.find("\nchatbot,") != std::string::npos);
    CHECK(cli(dir, data(dir) + " eval run --topics " + quote((dir / "topics.jsonl").string()) + " --methods nope")
              .exit_code == 2);
}
