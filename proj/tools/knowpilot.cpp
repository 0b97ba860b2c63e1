// knowpilot command line: ingest documents, drive sessions, run
// evaluations and serve the HTTP API.
//
// Exit codes: 0 success, 1 domain or runtime error, 2 usage error.

#include <algorithm>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <unistd.h>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "knowpilot/errors.hpp"
#include "knowpilot/eval.hpp"
#include "knowpilot/service.hpp"
#include "knowpilot/workspace.hpp"

namespace fs = std::filesystem;
using namespace knowpilot;

namespace {

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<fs::path> expand_inputs(const std::vector<std::string>& inputs) {
    std::vector<fs::path> files;
    for (const auto& input : inputs) {
        const fs::path path(input);
        if (fs::is_directory(path)) {
            std::vector<fs::path> found;
            for (const auto& entry : fs::recursive_directory_iterator(path)) {
                const auto ext = entry.path().extension();
                if (entry.is_regular_file() && (ext == ".txt" || ext == ".md")) found.push_back(entry.path());
            }
            std::sort(found.begin(), found.end());
            files.insert(files.end(), found.begin(), found.end());
        } else if (fs::is_regular_file(path)) {
            files.push_back(path);
        } else {
            throw NotFound("no such file or directory: " + input);
        }
    }
    return files;
}

Json parse_json_arg(const std::string& text, const char* what) {
    auto j = Json::parse(text, nullptr, false);
    if (j.is_discarded()) throw UsageError(std::string(what) + " is not valid JSON");
    return j;
}

void print_json(const Json& j) { std::cout << j.dump(2) << "\n"; }

std::pair<std::string, int> parse_bind(const std::string& bind) {
    const auto colon = bind.rfind(':');
    if (colon == std::string::npos) throw UsageError("--bind expects host:port");
    try {
        const int port = std::stoi(bind.substr(colon + 1));
        if (port < 0 || port > 65535) throw std::out_of_range("port");
        return {bind.substr(0, colon), port};
    } catch (const std::logic_error&) {
        throw UsageError("--bind has an invalid port: " + bind);
    }
}

std::vector<std::shared_ptr<MethodRunner>> make_methods(const std::string& list, Workspace& ws) {
    std::vector<std::shared_ptr<MethodRunner>> methods;
    std::stringstream in(list);
    for (std::string name; std::getline(in, name, ',');) {
        name = trim(name);
        if (name == "knowpilot" || name == "pipeline") {
            methods.push_back(std::make_shared<PipelineRunner>(ws.pipeline));
        } else if (name == "chatbot") {
            methods.push_back(std::make_shared<ChatbotRunner>(ws.gateway, ws.templates));
        } else if (name.rfind("external:", 0) == 0) {
            const auto rest = name.substr(9);
            const auto eq = rest.find('=');
            if (eq == std::string::npos) throw UsageError("external methods are given as external:<name>=<outputs.jsonl>");
            methods.push_back(std::make_shared<ExternalRunner>(rest.substr(0, eq), rest.substr(eq + 1)));
        } else if (!name.empty()) {
            throw UsageError("unknown method '" + name + "'");
        }
    }
    if (methods.empty()) throw UsageError("--methods lists no method");
    return methods;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"knowpilot: knowledge-augmented domain writing"};
    app.require_subcommand(1);

    WorkspaceOptions options = WorkspaceOptions::from_env();
    std::string data_dir = options.data_dir.string();
    std::string templates_dir;
    std::string fixtures;
    bool verbose = false;
    std::optional<std::uint64_t> seed = options.id_seed;
    app.add_option("--data-dir", data_dir, "Data directory (default $KNOWPILOT_DATA_DIR or ./knowpilot-data)");
    app.add_flag("--offline", options.offline, "Use the offline model, hashing embedder and fixture search");
    app.add_option("--templates", templates_dir, "Directory of prompt template overrides");
    app.add_option("--search-fixtures", fixtures, "JSON file of canned search results");
    app.add_option("--seed", seed, "Seed ids for reproducible runs (default $KNOWPILOT_ID_SEED)");
    app.add_flag("-v,--verbose", verbose, "Log to stderr at debug level");

    auto* ingest = app.add_subcommand("ingest", "Add documents to the private knowledge base");
    std::vector<std::string> ingest_paths;
    ingest->add_option("paths", ingest_paths, "Files or directories (.txt, .md)")->required();

    auto* session = app.add_subcommand("session", "Create and drive writing sessions");
    session->require_subcommand(1);
    std::string session_id, brief, section_id, json_arg, out_path;
    bool auto_accept = false;

    auto* s_new = session->add_subcommand("new", "Create a session and parse its brief");
    s_new->add_option("--brief", brief, "Writing brief")->required();
    auto* s_list = session->add_subcommand("list", "List session ids");
    auto* s_show = session->add_subcommand("show", "Print the session state");
    s_show->add_option("id", session_id)->required();
    auto* s_config = session->add_subcommand("config", "Edit the config with a JSON change");
    s_config->add_option("id", session_id)->required();
    s_config->add_option("change", json_arg, R"(e.g. '{"style":"casual"}' or '{"instruction":"..."}')")->required();
    auto* s_outline = session->add_subcommand("outline", "Generate the outline");
    s_outline->add_option("id", session_id)->required();
    auto* s_edit = session->add_subcommand("edit-outline", "Apply an outline command");
    s_edit->add_option("id", session_id)->required();
    s_edit->add_option("command", json_arg, R"(e.g. '{"op":"retitle","section_id":"sec-1","heading":"..."}')")->required();
    auto* s_write = session->add_subcommand("write", "Retrieve and draft every pending section");
    s_write->add_option("id", session_id)->required();
    s_write->add_flag("--auto-accept", auto_accept, "Accept each draft");
    auto* s_action = session->add_subcommand("action", "Submit a user action on a drafted section");
    s_action->add_option("id", session_id)->required();
    s_action->add_option("section", section_id)->required();
    s_action->add_option("action", json_arg, R"(e.g. '{"kind":"accept"}')")->required();
    auto* s_export = session->add_subcommand("export", "Write the article as Markdown");
    s_export->add_option("id", session_id)->required();
    s_export->add_option("--out", out_path, "Output file (default stdout)");

    auto* eval = app.add_subcommand("eval", "Evaluation harness");
    eval->require_subcommand(1);
    auto* e_run = eval->add_subcommand("run", "Compare methods over a topic file");
    std::string topics_path, methods_arg = "knowpilot,chatbot", report_dir;
    int parallel = 1;
    e_run->add_option("--topics", topics_path, "JSONL topic file")->required();
    e_run->add_option("--methods", methods_arg, "Comma list: knowpilot, chatbot, external:<name>=<file>");
    e_run->add_option("--out-dir", report_dir, "Write report.csv, rows.csv and report.json here");
    e_run->add_option("--parallel", parallel, "Topics evaluated concurrently")->check(CLI::PositiveNumber);

    auto* serve = app.add_subcommand("serve", "Run the HTTP API");
    std::string bind = "127.0.0.1:8080";
    serve->add_option("--bind", bind, "host:port");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    spdlog::set_default_logger(spdlog::stderr_color_mt("knowpilot"));
    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::warn);

    try {
        options.data_dir = data_dir;
        options.id_seed = seed;
        if (!templates_dir.empty()) options.templates_dir = templates_dir;
        if (!fixtures.empty()) options.search_fixtures = fixtures;
        if (serve->parsed()) options.pipeline.fail_fast_when_busy = true;
        auto ws = Workspace::open(options);
        auto& p = *ws.pipeline;

        if (ingest->parsed()) {
            for (const auto& file : expand_inputs(ingest_paths)) {
                RawDocument doc;
                doc.doc_id = file.lexically_normal().generic_string();
                doc.title = file.stem().string();
                doc.source_path = file.string();
                doc.body = read_file(file);
                const auto ids = ws.knowledge->ingest_document(doc);
                std::cout << doc.doc_id << "\t" << ids.size() << " chunks\n";
            }
        } else if (s_new->parsed()) {
            const auto id = p.create_session().session_id;
            const auto config = p.parse_priors(id, brief);
            print_json({{"session_id", id}, {"config", config}});
        } else if (s_list->parsed()) {
            for (const auto& id : p.session_ids()) std::cout << id << "\n";
        } else if (s_show->parsed()) {
            print_json(p.session(session_id));
        } else if (s_config->parsed()) {
            print_json(p.edit_config(session_id, parse_json_arg(json_arg, "change").get<ConfigChange>()));
        } else if (s_outline->parsed()) {
            const auto outline = p.generate_outline(session_id);
            std::cout << outline.title << "\n";
            for (const auto& s : outline.sections) std::cout << s.id << "\t" << s.heading << "\n";
        } else if (s_edit->parsed()) {
            print_json(p.edit_outline(session_id, parse_json_arg(json_arg, "command").get<OutlineCommand>()));
        } else if (s_write->parsed()) {
            const auto s = p.draft_all_sections(session_id, auto_accept);
            for (const auto& section : s.outline->sections)
                std::cout << section.id << "\t" << to_string(section.status) << "\t" << section.heading << "\n";
            std::cout << "state: " << to_string(s.state) << "\n";
        } else if (s_action->parsed()) {
            print_json(p.submit_user_action(session_id, section_id, parse_json_arg(json_arg, "action").get<UserAction>()));
        } else if (s_export->parsed()) {
            const auto markdown = p.export_markdown(session_id);
            if (out_path.empty()) {
                std::cout << markdown;
            } else {
                write_file_atomic(out_path, markdown);
            }
        } else if (e_run->parsed()) {
            const auto topics = load_topics(topics_path);
            const auto methods = make_methods(methods_arg, ws);
            const auto reports = run_comparison(methods, topics, *ws.judge, ws.templates, {parallel});
            std::cout << report_table(reports);
            if (!report_dir.empty()) {
                fs::create_directories(report_dir);
                write_file_atomic(fs::path(report_dir) / "report.csv", report_csv(reports));
                write_file_atomic(fs::path(report_dir) / "rows.csv", rows_csv(reports));
                write_file_atomic(fs::path(report_dir) / "report.json", report_json(reports).dump(2) + "\n");
            }
        } else if (serve->parsed()) {
            const auto [host, port] = parse_bind(bind);
            sigset_t signals;
            sigemptyset(&signals);
            sigaddset(&signals, SIGINT);
            sigaddset(&signals, SIGTERM);
            pthread_sigmask(SIG_BLOCK, &signals, nullptr);

            ApiService service({ws.pipeline, ws.knowledge, ws.experience});
            const int bound = service.bind(host, port);
            std::cout << "listening on " << host << ":" << bound << std::endl;
            std::jthread waiter([&] {
                int sig = 0;
                sigwait(&signals, &sig);
                service.stop();
            });
            service.run();
            // Unblock the waiter when the server stopped on its own.
            kill(getpid(), SIGTERM);
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const Error& e) {
        std::cerr << "error [" << e.code() << "]: " << e.what() << "\n";
        return kExitError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
    return 0;
}
