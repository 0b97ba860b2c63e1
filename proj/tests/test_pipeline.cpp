#include <doctest.h>

#include <condition_variable>
#include <fstream>
#include <future>
#include <thread>

#include "knowpilot/errors.hpp"
#include "knowpilot/pipeline.hpp"
#include "knowpilot/session.hpp"
#include "support.hpp"

using namespace knowpilot;
using kptest::make_harness;
using kptest::scripted_stub;

namespace {

const char* kBrief = "write as a cardiologist, formal tone, 5 sections about heart failure";

struct Started {
    kptest::Harness h;
    std::string sid;
};

Started outlined(const std::filesystem::path& root = {}, int sections = 3, PipelineOptions options = {}) {
    Started s{make_harness(root, scripted_stub(sections), std::move(options)), {}};
    s.sid = s.h.pipeline->create_session().session_id;
    s.h.pipeline->parse_priors(s.sid, kBrief);
    s.h.pipeline->generate_outline(s.sid);
    return s;
}

void ingest_corpus(KnowledgeStore& kb) {
    kb.ingest_document({"hf-drugs", "Drug therapy", "Beta blockers reduce mortality in heart failure with reduced ejection fraction. "
                                                   "Loop diuretics relieve congestion.", "", 0});
    kb.ingest_document({"hf-devices", "Devices", "Implantable defibrillators prevent sudden cardiac death.", "", 0});
    kb.ingest_document({"diagnosis", "Diagnosis", "Diagnosis", "", 0});
}

/// Backend that blocks a chosen tag until released.
class GateBackend final : public ChatBackend {
public:
    GateBackend(std::shared_ptr<StubBackend> inner, std::string tag) : inner_(std::move(inner)), tag_(std::move(tag)) {}

    ChatResponse send(const ChatRequest& request) override {
        if (request.request_tag == tag_) {
            std::unique_lock guard(mutex_);
            entered_ = true;
            cv_.notify_all();
            cv_.wait(guard, [&] { return released_; });
        }
        return inner_->send(request);
    }
    std::string name() const override { return "gate"; }

    void wait_entered() {
        std::unique_lock guard(mutex_);
        cv_.wait(guard, [&] { return entered_; });
    }
    void release() {
        std::lock_guard guard(mutex_);
        released_ = true;
        cv_.notify_all();
    }

private:
    std::shared_ptr<StubBackend> inner_;
    std::string tag_;
    std::mutex mutex_;
    std::condition_variable cv_;
    bool entered_ = false;
    bool released_ = false;
};

std::shared_ptr<Pipeline> rewire(const kptest::Harness& h, std::shared_ptr<const LlmGateway> gateway,
                                 std::shared_ptr<SearchProvider> search, PipelineOptions options = {}) {
    PipelineDeps deps = h.pipeline->deps();
    if (gateway) deps.gateway = std::move(gateway);
    if (search) deps.search = std::move(search);
    return std::make_shared<Pipeline>(std::move(deps), std::move(options));
}

const OutlineSection& section_at(const Session& s, std::size_t i) { return s.outline->sections.at(i); }

}  // namespace

// ---------------------------------------------------------------------------
// Requests and reply parsing

TEST_CASE("reply parsers") {
    const auto config = parse_config_reply(std::string("Sure:\n```json\n") + kptest::kConfigReply + "\n```");
    REQUIRE(config);
    CHECK(config->persona == "cardiologist");
    CHECK(config->structure_expectations == std::vector<std::string>{"define terms first"});
    CHECK(!parse_config_reply("no json here"));
    CHECK(!parse_config_reply(R"({"persona": "", "style": "x"})"));
    CHECK(parse_config_reply(R"({"persona": "p", "style": "s", "structure_expectations": "one"})")
              ->structure_expectations == std::vector<std::string>{"one"});

    const auto outline = parse_outline_reply("**Title:** HF\n1. **Intro** :: why\n2) Body\nnot a line\n", "fallback");
    REQUIRE(outline);
    CHECK(outline->title == "HF");
    REQUIRE(outline->sections.size() == 2);
    CHECK(outline->sections[0].heading == "Intro");
    CHECK(outline->sections[0].intent_notes == "why");
    CHECK(outline->sections[1].id == "sec-2");
    CHECK(parse_outline_reply("1. Only", "  the   brief ")->title == "the brief");
    CHECK(!parse_outline_reply("Title: x\nno sections", "b"));

    CHECK(parse_keyword_reply("- one\n2. Two\n\"three\"\nONE\n\n") == std::vector<std::string>{"one", "Two", "three"});
}

TEST_CASE("request JSON validation") {
    CHECK_THROWS_AS(Json::object().get<ConfigChange>(), ValidationError);
    CHECK_THROWS_AS((Json{{"instruction", "x"}, {"style", "y"}}.get<ConfigChange>()), ValidationError);
    CHECK_THROWS_AS((Json{{"colour", "y"}}.get<ConfigChange>()), ValidationError);
    CHECK(Json{{"style", "y"}}.get<ConfigChange>().style == "y");
    CHECK_THROWS_AS((Json{{"op", "split"}}.get<OutlineCommand>()), ValidationError);
    CHECK_THROWS_AS((Json{{"kind", "reject"}}.get<UserAction>()), ValidationError);
    CHECK_THROWS_AS((Json{{"kind", "direct_edit"}}.get<UserAction>()), ValidationError);
    const auto action = UserAction::refine("a", "b");
    const auto back = Json(action).get<UserAction>();
    CHECK(back.kind == ActionKind::refinement);
    CHECK(back.original_phrase == "a");
    const auto cmd = OutlineCommand::move("sec-2", 0);
    CHECK(Json(Json(cmd).get<OutlineCommand>()) == Json(cmd));
}

// ---------------------------------------------------------------------------
// Priors and configuration

TEST_CASE("parse_priors produces revision 1 with the persona from the brief") {
    auto h = make_harness({});
    const auto sid = h.pipeline->create_session().session_id;
    const auto config = h.pipeline->parse_priors(sid, kBrief);
    CHECK(config.persona.find("cardiologist") != std::string::npos);
    CHECK(config.revision == 1);
    const auto s = h.pipeline->session(sid);
    CHECK(s.state == SessionState::configured);
    CHECK(s.brief == kBrief);
    const auto sent = h.stub->received("parse_priors");
    REQUIRE(sent.size() == 1);
    CHECK(sent[0].temperature == 0.0);
    CHECK(sent[0].messages[1].content.find(kBrief) != std::string::npos);
}

TEST_CASE("parse_priors preconditions and parse failures") {
    auto h = make_harness({});
    const auto sid = h.pipeline->create_session().session_id;
    CHECK_THROWS_AS(h.pipeline->parse_priors(sid, "   "), PreconditionViolation);
    CHECK_THROWS_AS(h.pipeline->parse_priors("missing", kBrief), NotFound);

    auto prose = std::make_shared<StubBackend>();
    prose->script("parse_priors", "I would write it like a doctor.");
    auto p = make_harness({}, prose);
    const auto sid2 = p.pipeline->create_session().session_id;
    CHECK_THROWS_AS(p.pipeline->parse_priors(sid2, kBrief), ConfigParseFailure);
    CHECK(prose->calls("parse_priors") == 2);
    CHECK(prose->received("parse_priors")[1].messages.size() == 4);
    CHECK(p.pipeline->session(sid2).state == SessionState::new_);

    auto second = std::make_shared<StubBackend>();
    second->script("parse_priors", std::vector<StubReply>{{"prose", 0}, {kptest::kConfigReply, 0}});
    auto q = make_harness({}, second);
    const auto sid3 = q.pipeline->create_session().session_id;
    CHECK(q.pipeline->parse_priors(sid3, kBrief).persona == "cardiologist");
}

TEST_CASE("edit_config: field edit stores a direct edit of the description") {
    auto h = make_harness({});
    const auto sid = h.pipeline->create_session().session_id;
    CHECK_THROWS_AS(h.pipeline->edit_config(sid, ConfigChange::field("style", "casual")), PreconditionViolation);
    const auto before = h.pipeline->parse_priors(sid, kBrief);
    const auto after = h.pipeline->edit_config(sid, ConfigChange::field("style", "casual"));
    CHECK(after.style == "casual");
    CHECK(after.revision == before.revision + 1);
    REQUIRE(h.experience->count() == 1);
    const auto record = h.experience->all()[0];
    CHECK(record.kind == ExperienceKind::direct_edit);
    CHECK(record.session_id == sid);
    const auto& payload = std::get<DirectEditPayload>(record.payload);
    CHECK(payload.original == describe_config(before));
    CHECK(apply_edit_script(payload.original, payload.edit_script) ==
          apply_edit_script(payload.revised, compute_edit_script(payload.revised, payload.revised)));
    CHECK(h.pipeline->session(sid).event_log.back().detail["experience_record_id"] == record.record_id);

    CHECK_THROWS_AS(h.pipeline->edit_config(sid, ConfigChange::field("style", "casual")), ValidationError);
    CHECK_THROWS_AS(h.pipeline->edit_config(sid, ConfigChange::field("persona", " ")), ValidationError);
    CHECK(h.experience->count() == 1);
}

TEST_CASE("edit_config: instruction stores a corrective record with before and after") {
    auto h = make_harness({});
    const auto sid = h.pipeline->create_session().session_id;
    const auto before = h.pipeline->parse_priors(sid, kBrief);
    const auto after = h.pipeline->edit_config(sid, ConfigChange::from_instruction("make it less formal"));
    CHECK(after.style == "casual");
    CHECK(after.revision == 2);
    REQUIRE(h.experience->count() == 1);
    const auto record = h.experience->all()[0];
    CHECK(record.kind == ExperienceKind::corrective_prompt);
    const auto& payload = std::get<CorrectivePromptPayload>(record.payload);
    CHECK(payload.instruction == "make it less formal");
    CHECK(payload.before == describe_config(before));
    CHECK(payload.after == describe_config(after));
    CHECK_THROWS_AS(h.pipeline->edit_config(sid, ConfigChange::from_instruction("  ")), ValidationError);
}

// ---------------------------------------------------------------------------
// Outline

TEST_CASE("generate_outline: five headings give five pending sections") {
    auto h = make_harness({}, scripted_stub(5));
    const auto sid = h.pipeline->create_session().session_id;
    CHECK_THROWS_AS(h.pipeline->generate_outline(sid), PreconditionViolation);
    h.pipeline->parse_priors(sid, kBrief);
    const auto outline = h.pipeline->generate_outline(sid);
    CHECK(outline.title == "Heart Failure Care");
    REQUIRE(outline.sections.size() == 5);
    for (const auto& s : outline.sections) CHECK(s.status == SectionStatus::pending);
    CHECK(validate_outline(outline).empty());
    CHECK(h.pipeline->session(sid).state == SessionState::outlined);
    CHECK_THROWS_AS(h.pipeline->generate_outline(sid), PreconditionViolation);
}

TEST_CASE("generate_outline: no headings after a reformat fails") {
    auto stub = scripted_stub();
    stub->script("outline", "Here are some thoughts on heart failure.");
    auto h = make_harness({}, stub);
    const auto sid = h.pipeline->create_session().session_id;
    h.pipeline->parse_priors(sid, kBrief);
    CHECK_THROWS_AS(h.pipeline->generate_outline(sid), OutlineParseFailure);
    CHECK(stub->calls("outline") == 2);
    CHECK(h.pipeline->session(sid).state == SessionState::configured);
}

TEST_CASE("edit_outline: reorder moves C to the front and stores an edit") {
    auto s = outlined();
    auto& p = *s.h.pipeline;
    const auto before = p.session(s.sid).outline->sections;
    const auto after = p.edit_outline(s.sid, OutlineCommand::move(before[2].id, 0));
    REQUIRE(after.sections.size() == 3);
    CHECK(after.sections[0].id == before[2].id);
    CHECK(after.sections[1].id == before[0].id);
    CHECK(after.sections[2].id == before[1].id);
    CHECK(after.revision == 2);
    CHECK(s.h.experience->count() == 1);
    CHECK(p.session(s.sid).event_log.back().latency_ms == 0);

    const auto full = p.edit_outline(s.sid, OutlineCommand::reorder({before[0].id, before[1].id, before[2].id}));
    CHECK(full.sections[0].id == before[0].id);
    CHECK_THROWS_AS(p.edit_outline(s.sid, OutlineCommand::reorder({before[0].id})), ValidationError);
    CHECK_THROWS_AS(p.edit_outline(s.sid, OutlineCommand::remove("sec-99")), UnknownSection);
    CHECK(s.h.experience->count() == 2);
}

TEST_CASE("edit_outline: the last section cannot be removed") {
    auto s = outlined({}, 1);
    CHECK_THROWS_AS(s.h.pipeline->edit_outline(s.sid, OutlineCommand::remove("sec-1")), PreconditionViolation);
    CHECK(s.h.pipeline->session(s.sid).outline->sections.size() == 1);
    CHECK(s.h.experience->count() == 0);
}

TEST_CASE("random command sequences keep the outline valid") {
    std::mt19937 rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        Outline outline{"T", {{"sec-1", "A", "", SectionStatus::pending}}, 1};
        for (int step = 0; step < 40; ++step) {
            const auto n = outline.sections.size();
            const auto pick = outline.sections[rng() % n].id;
            OutlineCommand cmd;
            switch (rng() % 4) {
                case 0: cmd = OutlineCommand::add("H" + std::to_string(step), "", rng() % (n + 1)); break;
                case 1: cmd = OutlineCommand::remove(pick); break;
                case 2: cmd = OutlineCommand::move(pick, rng() % n); break;
                default: cmd = OutlineCommand::retitle(pick, "R" + std::to_string(step)); break;
            }
            try {
                const auto next = apply_outline_command(outline, cmd);
                CHECK(next.revision == outline.revision + 1);
                outline = next;
            } catch (const PreconditionViolation&) {
                CHECK(cmd.op == OutlineOp::remove);
                CHECK(n == 1);
            }
            CHECK(!outline.sections.empty());
            CHECK(validate_outline(outline).empty());
        }
    }
}

TEST_CASE("retitling a drafted section sends it back to retrieved; removal drops its draft") {
    auto s = outlined();
    auto& p = *s.h.pipeline;
    p.retrieve_for_section(s.sid, "sec-1");
    p.generate_section(s.sid, "sec-1");
    p.edit_outline(s.sid, OutlineCommand::retitle("sec-1", "Diagnosis and staging"));
    auto session = p.session(s.sid);
    CHECK(session.outline->find("sec-1")->status == SectionStatus::retrieved);
    const auto v2 = p.generate_section(s.sid, "sec-1");
    CHECK(v2.version == 2);
    p.edit_outline(s.sid, OutlineCommand::remove("sec-1"));
    session = p.session(s.sid);
    CHECK(!session.drafts.contains("sec-1"));
    CHECK(!session.evidence.contains("sec-1"));
}

// ---------------------------------------------------------------------------
// Retrieval

TEST_CASE("retrieve with an empty knowledge base still returns web and experience") {
    auto s = outlined();
    auto& p = *s.h.pipeline;
    const auto heading = section_at(p.session(s.sid), 0).heading;
    s.h.search->add(heading, {{"Guide", "snippet", "https://example.org/hf", 1, 0}});
    const auto r = p.retrieve_for_section(s.sid, "sec-1");
    CHECK(r.private_results.empty());
    REQUIRE(r.web.size() == 1);
    CHECK(r.web[0].url == "https://example.org/hf");
    CHECK(!r.search_degraded);
    const auto session = p.session(s.sid);
    CHECK(session.state == SessionState::drafting);
    CHECK(session.outline->find("sec-1")->status == SectionStatus::retrieved);
    CHECK(session.evidence.at("sec-1").queries.front() == heading);
    CHECK(session.evidence.at("sec-1").queries.size() == 4);
    CHECK_THROWS_AS(p.retrieve_for_section(s.sid, "sec-1"), PreconditionViolation);
    CHECK_THROWS_AS(p.retrieve_for_section(s.sid, "sec-9"), UnknownSection);
}

TEST_CASE("a chunk identical to the heading ranks first") {
    auto s = outlined();
    ingest_corpus(*s.h.knowledge);
    const auto r = s.h.pipeline->retrieve_for_section(s.sid, "sec-1");
    REQUIRE(!r.private_results.empty());
    CHECK(r.private_results[0].chunk.text == "Diagnosis");
    CHECK(r.private_results[0].rank == 1);
    CHECK(r.private_results[0].score == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(r.private_results.size() <= static_cast<std::size_t>(kDefaultTopK));
    for (std::size_t i = 1; i < r.private_results.size(); ++i)
        CHECK(r.private_results[i - 1].score >= r.private_results[i].score);
}

TEST_CASE("unavailable search degrades instead of failing") {
    kptest::TempDir dir;
    auto s = outlined(dir.path());
    auto p = rewire(s.h, nullptr, std::make_shared<UnavailableSearch>());
    const auto r = p->retrieve_for_section(s.sid, "sec-1");
    CHECK(r.search_degraded);
    CHECK(r.web.empty());
    CHECK(p->session(s.sid).evidence.at("sec-1").search_degraded);
    const auto draft = p->generate_section(s.sid, "sec-1");
    CHECK(!draft.text.empty());
}

TEST_CASE("web results from several queries are interleaved and deduplicated") {
    auto s = outlined();
    auto& p = *s.h.pipeline;
    s.h.search->add("Diagnosis", {{"a", "", "u1", 1, 0}, {"b", "", "u2", 2, 0}});
    s.h.search->add("ejection fraction", {{"c", "", "u3", 1, 0}, {"d", "", "u1", 2, 0}});
    s.h.search->add("beta blockers", {{"e", "", "u4", 1, 0}});
    const auto r = p.retrieve_for_section(s.sid, "sec-1");
    std::vector<std::string> urls;
    for (const auto& w : r.web) urls.push_back(w.url);
    CHECK(urls == std::vector<std::string>{"u1", "u3", "u4", "u2"});
    for (std::size_t i = 0; i < r.web.size(); ++i) CHECK(r.web[i].rank == static_cast<int>(i + 1));
}

// ---------------------------------------------------------------------------
// Generation and user actions

TEST_CASE("generate_section drafts from the fused prompt and records provenance") {
    std::vector<FusedPrompt> seen;
    PipelineOptions options;
    options.on_fused_prompt = [&](const std::string&, const std::string&, const FusedPrompt& p) { seen.push_back(p); };
    auto s = outlined({}, 3, options);
    ingest_corpus(*s.h.knowledge);
    s.h.search->add("Diagnosis", {{"Guide", "snippet", "https://example.org/hf", 1, 0}});
    auto& p = *s.h.pipeline;
    CHECK_THROWS_AS(p.generate_section(s.sid, "sec-1"), PreconditionViolation);
    p.retrieve_for_section(s.sid, "sec-1");
    const auto draft = p.generate_section(s.sid, "sec-1");
    CHECK(draft.text == "Heart failure is treated with beta blockers in most patients.");
    CHECK(draft.version == 1);
    REQUIRE(seen.size() == 1);
    CHECK(draft.provenance == seen[0].included);
    CHECK(seen[0].token_estimate <= kDefaultTokenBudget);
    const auto sent = s.h.stub->received("section");
    REQUIRE(sent.size() == 1);
    CHECK(sent[0].messages[0].content == seen[0].system_text);
    CHECK(sent[0].messages[1].content == seen[0].user_text);
    CHECK(Json(p.fused_prompt(s.sid, "sec-1")) == Json(seen[0]));
    CHECK(s.h.experience->count() == 0);
}

TEST_CASE("corrective prompt produces version 2 and a record") {
    auto s = outlined();
    auto& p = *s.h.pipeline;
    p.retrieve_for_section(s.sid, "sec-1");
    const auto v1 = p.generate_section(s.sid, "sec-1");
    const auto v2 = p.submit_user_action(s.sid, "sec-1", UserAction::corrective("mention ACE inhibitors"));
    CHECK(v2.version == 2);
    CHECK(v2.text == "Heart failure is usually treated with beta blockers and ACE inhibitors.");
    const auto sent = s.h.stub->received("corrective");
    REQUIRE(sent.size() == 1);
    REQUIRE(sent[0].messages.size() == 4);
    CHECK(sent[0].messages[2].content == v1.text);
    CHECK(sent[0].messages[3].content.find("mention ACE inhibitors") != std::string::npos);
    REQUIRE(s.h.experience->count() == 1);
    const auto payload = std::get<CorrectivePromptPayload>(s.h.experience->all()[0].payload);
    CHECK(payload.before == v1.text);
    CHECK(payload.after == v2.text);
    CHECK(p.session(s.sid).event_log.back().kind == EventKind::corrective_prompt);
}

TEST_CASE("direct edit of one word stores a script that reproduces the new draft") {
    auto s = outlined();
    auto& p = *s.h.pipeline;
    p.retrieve_for_section(s.sid, "sec-1");
    const auto v1 = p.generate_section(s.sid, "sec-1");
    const std::string revised = "Heart failure is treated with beta blockers in many patients.";
    const auto v2 = p.submit_user_action(s.sid, "sec-1", UserAction::direct_edit(revised));
    CHECK(v2.text == revised);
    CHECK(v2.version == 2);
    CHECK(v2.provenance == v1.provenance);
    REQUIRE(s.h.experience->count() == 1);
    const auto payload = std::get<DirectEditPayload>(s.h.experience->all()[0].payload);
    CHECK(apply_edit_script(v1.text, payload.edit_script) == revised);
    CHECK(edit_cost(payload.edit_script) == 2);
    CHECK_THROWS_AS(p.submit_user_action(s.sid, "sec-1", UserAction::direct_edit("  ")), ValidationError);
}

TEST_CASE("refinement replaces every occurrence; missing phrase leaves the draft alone") {
    auto stub = scripted_stub();
    stub->script("section", "HF is common. HF is serious.");
    auto h = make_harness({}, stub);
    auto& p = *h.pipeline;
    const auto sid = p.create_session().session_id;
    p.parse_priors(sid, kBrief);
    p.generate_outline(sid);
    p.retrieve_for_section(sid, "sec-1");
    p.generate_section(sid, "sec-1");
    const auto refined = p.submit_user_action(sid, "sec-1", UserAction::refine("HF", "Heart failure"));
    CHECK(refined.text == "Heart failure is common. Heart failure is serious.");
    CHECK(h.experience->count() == 1);

    const auto before = p.session(sid);
    CHECK_THROWS_AS(p.submit_user_action(sid, "sec-1", UserAction::refine("myocarditis", "x")), PhraseNotFound);
    CHECK_THROWS_AS(p.submit_user_action(sid, "sec-1", UserAction::refine("", "x")), ValidationError);
    CHECK_THROWS_AS(p.submit_user_action(sid, "sec-1", UserAction::refine("common", "common")), ValidationError);
    CHECK(p.session(sid) == before);
    CHECK(h.experience->count() == 1);
}

TEST_CASE("accept stores nothing and freezes the section") {
    auto s = outlined();
    auto& p = *s.h.pipeline;
    p.retrieve_for_section(s.sid, "sec-1");
    p.generate_section(s.sid, "sec-1");
    p.submit_user_action(s.sid, "sec-1", UserAction::accept());
    CHECK(s.h.experience->count() == 0);
    CHECK(p.session(s.sid).outline->find("sec-1")->status == SectionStatus::accepted);
    CHECK_THROWS_AS(p.submit_user_action(s.sid, "sec-1", UserAction::direct_edit("x")), PreconditionViolation);
    CHECK_THROWS_AS(p.submit_user_action(s.sid, "nope", UserAction::accept()), UnknownSection);
}

// ---------------------------------------------------------------------------
// Whole sessions

TEST_CASE("every intervention leaves exactly one record") {
    std::mt19937 rng(8);
    for (int trial = 0; trial < 5; ++trial) {
        auto s = outlined({}, 4);
        auto& p = *s.h.pipeline;
        p.edit_config(s.sid, ConfigChange::field("style", "style " + std::to_string(trial)));
        p.edit_outline(s.sid, OutlineCommand::add("Extra"));
        const auto sections = p.session(s.sid).outline->sections;
        for (const auto& section : sections) {
            p.retrieve_for_section(s.sid, section.id);
            p.generate_section(s.sid, section.id);
            for (int k = 0; k < 3; ++k) {
                const auto current = p.session(s.sid).drafts.at(section.id).text;
                switch (rng() % 3) {
                    case 0: p.submit_user_action(s.sid, section.id, UserAction::direct_edit(current + " More.")); break;
                    case 1: p.submit_user_action(s.sid, section.id, UserAction::corrective("tighten")); break;
                    default: p.submit_user_action(s.sid, section.id, UserAction::refine(current.substr(0, 5), "XY")); break;
                }
            }
            p.submit_user_action(s.sid, section.id, UserAction::accept());
        }
        const auto session = p.session(s.sid);
        CHECK(session.state == SessionState::complete);
        CHECK(s.h.experience->count_for_session(s.sid) == intervention_count(session));
        CHECK(intervention_count(session) == 2 + 5 * 3);
        for (const auto& e : session.event_log)
            if (is_intervention(e.kind)) CHECK(s.h.experience->get(e.detail.at("experience_record_id")));
    }
}

TEST_CASE("auto-accept drafting stores no records and completes the session") {
    auto s = outlined({}, 4);
    auto& p = *s.h.pipeline;
    const auto done = p.draft_all_sections(s.sid, true);
    CHECK(done.state == SessionState::complete);
    CHECK(done.drafts.size() == 4);
    CHECK(s.h.experience->count() == 0);
    CHECK(p.draft_all_sections(s.sid, true) == done);

    auto t = outlined({}, 2);
    const auto drafted = t.h.pipeline->draft_all_sections(t.sid, false);
    CHECK(drafted.state == SessionState::drafting);
    for (const auto& section : drafted.outline->sections) CHECK(section.status == SectionStatus::drafted);
}

TEST_CASE("provenance ids resolve in exactly one store") {
    auto s = outlined({}, 3);
    ingest_corpus(*s.h.knowledge);
    s.h.search->add("Diagnosis", {{"Guide", "snippet", "https://example.org/hf", 1, 0}});
    auto& p = *s.h.pipeline;
    // Earlier interventions leave experience that later sections retrieve.
    p.edit_config(s.sid, ConfigChange::field("style", "plain"));
    p.retrieve_for_section(s.sid, "sec-1");
    p.generate_section(s.sid, "sec-1");
    p.submit_user_action(s.sid, "sec-1", UserAction::refine("beta blockers", "beta-blockers"));
    p.submit_user_action(s.sid, "sec-1", UserAction::accept());
    p.draft_all_sections(s.sid, true);
    const auto session = p.session(s.sid);
    std::size_t refs = 0;
    std::set<ProvenanceSource> sources;
    for (const auto& [sec, draft] : session.drafts) {
        const auto& evidence = session.evidence.at(sec);
        for (const auto& ref : draft.provenance) {
            ++refs;
            sources.insert(ref.source);
            const bool in_kb = s.h.knowledge->chunk(ref.id).has_value();
            const bool in_exp = s.h.experience->get(ref.id).has_value();
            const bool in_web = std::any_of(evidence.web.begin(), evidence.web.end(),
                                            [&](const WebResult& w) { return w.url == ref.id; });
            CAPTURE(ref.id);
            CHECK(int(in_kb) + int(in_exp) + int(in_web) == 1);
            if (ref.source == ProvenanceSource::explicit_private) CHECK(in_kb);
            if (ref.source == ProvenanceSource::explicit_open) CHECK(in_web);
            if (ref.source == ProvenanceSource::experiential) CHECK(in_exp);
        }
    }
    CHECK(refs > 0);
    CHECK(sources.size() == 3);
}

TEST_CASE("same inputs and seeds give byte-identical artifacts") {
    std::array<std::map<std::string, std::string>, 2> artifacts;
    for (auto& out : artifacts) {
        kptest::TempDir dir;
        auto s = outlined(dir.path(), 3);
        ingest_corpus(*s.h.knowledge);
        auto& p = *s.h.pipeline;
        p.edit_config(s.sid, ConfigChange::from_instruction("less formal"));
        p.retrieve_for_section(s.sid, "sec-1");
        p.generate_section(s.sid, "sec-1");
        p.submit_user_action(s.sid, "sec-1", UserAction::corrective("mention ACE inhibitors"));
        p.draft_all_sections(s.sid, true);
        out["export"] = p.export_markdown(s.sid);
        const auto sdir = dir / "sessions" / s.sid;
        for (const auto& entry : std::filesystem::recursive_directory_iterator(sdir))
            if (entry.is_regular_file())
                out[std::filesystem::relative(entry.path(), sdir).string()] = kptest::read_text(entry.path());
        out["experience"] = kptest::read_text(dir / "experience" / "experience.jsonl");
    }
    CHECK(artifacts[0].contains("events.jsonl"));
    CHECK(artifacts[0].contains("drafts/sec-1.md"));
    CHECK(artifacts[0] == artifacts[1]);
}

TEST_CASE("export needs a complete session and lists sources per section") {
    auto s = outlined({}, 2);
    ingest_corpus(*s.h.knowledge);
    auto& p = *s.h.pipeline;
    p.retrieve_for_section(s.sid, "sec-1");
    p.generate_section(s.sid, "sec-1");
    CHECK_THROWS_AS(p.export_markdown(s.sid), SessionIncomplete);
    p.draft_all_sections(s.sid, true);
    const auto md = p.export_markdown(s.sid);
    CHECK(md.rfind("# Heart Failure Care\n", 0) == 0);
    CHECK(md.find("\n## Diagnosis\n\nHeart failure is treated") != std::string::npos);
    CHECK(md.find("\n## Drug Therapy\n") != std::string::npos);
    const auto appendix = md.find("\n---\n\n## Sources\n");
    REQUIRE(appendix != std::string::npos);
    CHECK(md.find("### Diagnosis", appendix) != std::string::npos);
    CHECK(md.find("- explicit_private: ", appendix) != std::string::npos);
}

TEST_CASE("interaction clock: waits plus latencies") {
    auto stub = scripted_stub(1);
    stub->script("parse_priors", std::vector<StubReply>{{kptest::kConfigReply, 300}});
    stub->script("outline", std::vector<StubReply>{{kptest::outline_reply(1), 200}});
    stub->script("keywords", std::vector<StubReply>{{"x", 50}});
    stub->script("section", std::vector<StubReply>{{"Draft.", 400}});
    auto h = make_harness({}, stub, {}, 7, 10'000);
    auto& p = *h.pipeline;
    const auto sid = p.create_session().session_id;  // t = 0
    p.parse_priors(sid, kBrief);                      // t = 10 s
    p.generate_outline(sid);                          // t = 20 s
    p.retrieve_for_section(sid, "sec-1");             // t = 30 s
    p.generate_section(sid, "sec-1");                 // t = 40 s
    p.submit_user_action(sid, "sec-1", UserAction::accept());  // t = 50 s
    const auto s = p.session(sid);
    REQUIRE(s.event_log.size() == 5);
    std::int64_t total = 0;
    for (const auto& e : s.event_log) total += e.wait_ms + e.latency_ms;
    CHECK(s.clock_ms == total);
    // Model time overlaps the next wait, so the clock equals elapsed wall time.
    CHECK(s.clock_ms == 50'000);
    CHECK(s.event_log[0].latency_ms == 300);
    CHECK(s.event_log[1].wait_ms == 10'000 - 300);
    CHECK(s.event_log[2].latency_ms == 50);
}

TEST_CASE("a busy session fails fast or waits, depending on options") {
    kptest::TempDir dir;
    auto s = outlined(dir.path(), 2);
    auto gate = std::make_shared<GateBackend>(s.h.stub, "keywords");
    auto gateway = std::make_shared<LlmGateway>(gate, "stub-model", RetryPolicy{}, [](std::chrono::milliseconds) {});
    PipelineOptions fast;
    fast.fail_fast_when_busy = true;
    auto p = rewire(s.h, gateway, nullptr, fast);
    const auto other = p->create_session().session_id;

    auto running = std::async(std::launch::async, [&] { return p->retrieve_for_section(s.sid, "sec-1"); });
    gate->wait_entered();
    CHECK_THROWS_AS(p->edit_outline(s.sid, OutlineCommand::add("X")), SessionBusy);
    CHECK_NOTHROW(p->parse_priors(other, kBrief));
    gate->release();
    running.get();
    CHECK(p->session(s.sid).outline->sections.size() == 2);

    auto gate2 = std::make_shared<GateBackend>(s.h.stub, "keywords");
    auto waiting = rewire(s.h, std::make_shared<LlmGateway>(gate2, "m", RetryPolicy{}, [](std::chrono::milliseconds) {}),
                          nullptr);
    auto first = std::async(std::launch::async, [&] { return waiting->retrieve_for_section(s.sid, "sec-2"); });
    gate2->wait_entered();
    auto second = std::async(std::launch::async, [&] { return waiting->edit_outline(s.sid, OutlineCommand::add("Y")); });
    CHECK(second.wait_for(std::chrono::milliseconds(100)) == std::future_status::timeout);
    gate2->release();
    first.get();
    CHECK(second.get().sections.size() == 3);
}

TEST_CASE("sessions survive a restart at every stage") {
    kptest::TempDir dir;
    std::string sid;
    std::uint64_t seed = 7;
    // A new seed per process so ids stay unique across restarts.
    const auto reopen = [&] { return make_harness(dir.path(), scripted_stub(2), {}, seed++); };
    const std::vector<std::function<void(Pipeline&)>> stages = {
        [&](Pipeline& p) { sid = p.create_session().session_id; },
        [&](Pipeline& p) { p.parse_priors(sid, kBrief); },
        [&](Pipeline& p) { p.generate_outline(sid); },
        [&](Pipeline& p) { p.retrieve_for_section(sid, "sec-1"); },
        [&](Pipeline& p) { p.generate_section(sid, "sec-1"); },
        [&](Pipeline& p) { p.submit_user_action(sid, "sec-1", UserAction::direct_edit("Edited draft.")); },
        [&](Pipeline& p) { p.draft_all_sections(sid, true); },
    };
    Session last;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        auto h = reopen();
        if (i > 0) CHECK(h.pipeline->session(sid) == last);
        // The fresh clock restarts at zero; the log keeps timestamps monotone.
        stages[i](*h.pipeline);
        last = h.pipeline->session(sid);
        CAPTURE(i);
        CHECK(reopen().pipeline->session(sid) == last);
    }
    CHECK(last.state == SessionState::complete);
    CHECK(reopen().pipeline->session_ids() == std::vector<std::string>{sid});

    // A torn trailing line from a crash mid-append is ignored.
    {
        std::ofstream out(dir / "sessions" / sid / "events.jsonl", std::ios::app);
        out << R"({"event_id": "x", "kind": "sect)";
    }
    CHECK(reopen().pipeline->session(sid) == last);
    CHECK(kptest::read_text(dir / "sessions" / sid / "drafts" / "sec-1.md") == "Edited draft.");
    CHECK_THROWS_AS(reopen().pipeline->session("../etc"), NotFound);
}
