#include "conformgen/pipeline.hpp"
#include "fixture_responder.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace fs = std::filesystem;
using namespace conformgen;

namespace {

struct Options {
    std::string config;
    std::string run_dir;
    std::string spec;
    std::string backend;
    std::string transcript;
    std::string endpoint;
    std::string model;
    std::string kb;
    std::string profile;
    std::string faults;
    std::string answers;
    std::string outputs;
    std::string verdicts;
    bool quiet = false;
};

void common(CLI::App* app, Options& o)
{
    app->add_option("-c,--config", o.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
    app->add_option("-r,--run-dir", o.run_dir, "Run directory");
    app->add_option("--spec", o.spec, "Specification text file");
    app->add_option("--backend", o.backend, "live, replay, record or fixture")
        ->check(CLI::IsMember({"live", "replay", "record", "fixture"}));
    app->add_option("--transcript", o.transcript, "Transcript for replay or record");
    app->add_option("--endpoint", o.endpoint, "Chat completions endpoint for live mode");
    app->add_option("--model", o.model, "Model name for live mode");
    app->add_option("--kb", o.kb, "Knowledge base directory");
    app->add_option("--profile", o.profile, "Testbed profile (JSON)");
    app->add_option("--faults", o.faults, "Fault injection profile (JSON)");
    app->add_option("--answers", o.answers, "Reference answers directory");
    app->add_flag("-q,--quiet", o.quiet, "Suppress progress lines");
}

pipeline::RunConfig build_config(const Options& o, const std::vector<std::string>& stages)
{
    auto cfg = o.config.empty() ? pipeline::RunConfig::defaults() : pipeline::RunConfig::load(o.config);
    if (!o.run_dir.empty())
        cfg.run_dir = o.run_dir;
    if (!o.spec.empty())
        cfg.spec_path = o.spec;
    if (!o.backend.empty() && o.backend != "fixture")
        cfg.backend.mode = llm::backend_mode_from_string(o.backend);
    if (!o.transcript.empty())
        cfg.backend.transcript_path = o.transcript;
    if (!o.endpoint.empty())
        cfg.backend.endpoint = o.endpoint;
    if (!o.model.empty())
        cfg.backend.model_name = o.model;
    if (!o.kb.empty())
        cfg.kb_path = o.kb;
    if (!o.profile.empty())
        cfg.testbed_profile = o.profile;
    if (!o.faults.empty())
        cfg.fault_profile = o.faults;
    if (!o.answers.empty())
        cfg.answers_dir = o.answers;
    cfg.stages.clear();
    for (const auto& s : stages)
        cfg.stages.push_back(pipeline::canonical_stage(s));
    return cfg;
}

int run_stages(const Options& o, const std::vector<std::string>& stages)
{
    auto cfg = build_config(o, stages);
    std::shared_ptr<llm::CompletionBackend> backend;
    if (o.backend == "fixture")
        backend = fixture::make_backend();
    pipeline::ProgressFn progress;
    if (!o.quiet)
        progress = [](const pipeline::StageEvent& e) {
            std::cerr << "[" << e.stage << "] " << e.action << (e.detail.empty() ? "" : " (" + e.detail + ")") << "\n";
        };
    pipeline::run(cfg, backend, progress);
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Protocol conformance test generation pipeline"};
    app.require_subcommand(1);
    Options o;

    struct StageCmd {
        const char* name;
        const char* help;
    };
    const std::vector<StageCmd> stage_cmds = {
        {"ingest", "Parse a specification into a section tree"},
        {"analyze", "Summarize sections and form functional modules"},
        {"model", "Model modules and enumerate testing points"},
        {"gen-cases", "Generate one test case per testing point"},
        {"verify", "Judge coverage and refine the case set"},
        {"forge", "Produce tester scripts and DUT configurations"},
        {"loop", "Escalate failed cases for regeneration"},
    };
    std::vector<std::pair<CLI::App*, std::string>> stage_apps;
    for (const auto& s : stage_cmds) {
        auto* sub = app.add_subcommand(s.name, s.help);
        common(sub, o);
        stage_apps.emplace_back(sub, s.name);
    }

    auto* metrics = app.add_subcommand("metrics", "Score generated artifacts against reference answers");
    common(metrics, o);
    metrics->add_option("--outputs", o.outputs, "Generated files to score without a pipeline run");
    metrics->add_option("--verdicts", o.verdicts, "Review verdicts (JSON object name to bool)");

    auto* report = app.add_subcommand("report", "Print the tables of a run directory");
    report->add_option("-r,--run-dir", o.run_dir, "Run directory")->required();

    auto* all = app.add_subcommand("run-all", "Run every stage, resuming where possible");
    common(all, o);

    CLI11_PARSE(app, argc, argv);

    try {
        for (const auto& [sub, name] : stage_apps)
            if (sub->parsed())
                return run_stages(o, {name});
        if (all->parsed())
            return run_stages(o, {});
        if (metrics->parsed()) {
            if (o.outputs.empty())
                return run_stages(o, {"metrics"});
            if (o.answers.empty())
                throw Error(ErrorKind::InvalidConfig, "answers", "--outputs requires --answers");
            std::optional<fs::path> verdicts;
            if (!o.verdicts.empty())
                verdicts = o.verdicts;
            auto m = pipeline::score_directories(o.answers, o.outputs, verdicts);
            if (!o.run_dir.empty())
                pipeline::write_metrics_run(o.run_dir, m);
            std::cout << m.dump(2) << "\n";
            return 0;
        }
        if (report->parsed()) {
            std::cout << pipeline::report(o.run_dir);
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << (e.subject().empty() ? "" : " [" + e.subject() + "]") << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
