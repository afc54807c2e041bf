#include "conformgen/metrics.hpp"
#include "conformgen/pipeline.hpp"
#include "support.hpp"

#include "doctest.h"

using namespace conformgen;
using namespace conformgen::pipeline;
namespace fs = std::filesystem;

namespace {

RunConfig mini(const fs::path& run_dir)
{
    auto cfg = RunConfig::defaults();
    cfg.spec_path = test::fixture("mini_rfc/mini_rfc.txt");
    cfg.backend.mode = llm::BackendMode::replay;
    cfg.backend.transcript_path = test::fixture("mini_rfc/transcript.jsonl");
    cfg.run_dir = run_dir;
    return cfg;
}

std::vector<StageEvent> run_logged(const RunConfig& cfg, std::shared_ptr<llm::CompletionBackend> backend = nullptr)
{
    std::vector<StageEvent> events;
    run(cfg, std::move(backend), [&](const StageEvent& e) { events.push_back(e); });
    return events;
}

std::vector<std::string> actions_for(const std::vector<StageEvent>& events, const std::string& action)
{
    std::vector<std::string> out;
    for (const auto& e : events)
        if (e.action == action)
            out.push_back(e.stage);
    return out;
}

ErrorKind kind_of(const std::function<void()>& fn)
{
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("no error raised");
    return ErrorKind::Io;
}

} // namespace

TEST_SUITE("pipeline")
{
    TEST_CASE("stage names and aliases")
    {
        CHECK(stage_names() ==
              std::vector<std::string>{"ingest", "analyze", "model", "generate", "verify", "forge", "loop", "metrics"});
        CHECK(canonical_stage("gen-cases") == "generate");
        CHECK(canonical_stage("forge") == "forge");
        CHECK(kind_of([] { canonical_stage("deploy"); }) == ErrorKind::InvalidConfig);
    }

    TEST_CASE("configuration overlay and path resolution")
    {
        auto d = RunConfig::defaults();
        CHECK(d.coverage.threshold == 50);
        CHECK(d.loop.max_rounds_per_attempt == 10);
        CHECK(d.loop.max_attempts == 3);
        CHECK(d.max_iterations == 10);
        CHECK(d.forge.retrieval_k == 3);

        test::TempDir tmp;
        io::write_file(tmp / "spec.txt", "x");
        io::write_json(tmp / "cfg.json", Json::parse(R"({"spec":"spec.txt","run_dir":"out","stages":["gen-cases","ingest"],
            "loop":{"max_attempts":2},"coverage":{"threshold":40}})"));
        auto c = RunConfig::load(tmp / "cfg.json");
        CHECK(c.spec_path == tmp / "spec.txt");
        CHECK(c.run_dir == tmp / "out");
        CHECK(c.selected_stages() == std::vector<std::string>{"ingest", "generate"});
        CHECK(c.loop.max_attempts == 2);
        CHECK(c.loop.max_rounds_per_attempt == 10);
        CHECK(c.coverage.threshold == 40);
        CHECK(c.coverage.basic_target == 90);
        CHECK(RunConfig::from_json(c.to_json()).to_json() == c.to_json());
        c.validate();

        CHECK(kind_of([&] { RunConfig::load(tmp / "absent.json"); }) == ErrorKind::InvalidConfig);
        CHECK(kind_of([] { RunConfig::from_json(Json{{"gateway", {{"max_repairs", -1}}}}); }) == ErrorKind::InvalidConfig);
        CHECK(kind_of([] { RunConfig::from_json(Json{{"analysis", {{"max_iterations", 0}}}}); }) == ErrorKind::InvalidConfig);
        auto no_spec = RunConfig::defaults();
        CHECK(kind_of([&] { no_spec.validate(); }) == ErrorKind::InvalidConfig);
        auto bad_kb = c;
        bad_kb.kb_path = tmp / "nokb";
        CHECK(kind_of([&] { bad_kb.validate(); }) == ErrorKind::InvalidConfig);
    }

    TEST_CASE("full replay run, then every stage resumes")
    {
        test::TempDir tmp;
        auto cfg = mini(tmp / "run");
        auto first = run_logged(cfg);
        CHECK(actions_for(first, "done") == stage_names());
        auto m = RunManifest::load(tmp / "run");
        for (const auto& s : m.stages) {
            CHECK(s.status == StageStatus::done);
            CHECK_FALSE(s.artifacts.empty());
            CHECK(verify_artifacts(tmp / "run", s));
        }
        CHECK(RunManifest::from_json(m.to_json()).to_json() == m.to_json());

        auto second = run_logged(cfg);
        CHECK(actions_for(second, "skip") == stage_names());
        CHECK(actions_for(second, "run").empty());

        // A tampered artifact reruns its stage and everything after it.
        io::write_file(tmp / "run/verify/coverage.json", "{}");
        auto third = run_logged(cfg);
        CHECK(actions_for(third, "skip") == std::vector<std::string>{"ingest", "analyze", "model", "generate"});
        CHECK(actions_for(third, "run") == std::vector<std::string>{"verify", "forge", "loop", "metrics"});
        CHECK(io::read_json(tmp / "run/verify/coverage.json").contains("final_breadth"));

        // A configuration change invalidates from the first stage on.
        auto changed = cfg;
        changed.loop.max_attempts = 2;
        auto fourth = run_logged(changed);
        CHECK(actions_for(fourth, "run") == stage_names());

        auto text = report(tmp / "run");
        CHECK(text.find("RFC 9990") != std::string::npos);
        CHECK(text.find("Table 2. Key-section coverage") != std::string::npos);
        CHECK(text.find("Refinement rounds: 1") != std::string::npos);
        CHECK(text.find("Table 3. Feedback loop outcomes") != std::string::npos);
        CHECK(text.find("Table 4. Artifact accuracy") != std::string::npos);
    }

    TEST_CASE("single stages need completed predecessors")
    {
        test::TempDir tmp;
        auto cfg = mini(tmp / "run");
        cfg.stages = {"forge"};
        CHECK(kind_of([&] { run(cfg); }) == ErrorKind::MissingPredecessorArtifact);

        cfg.stages = {"ingest", "analyze"};
        auto ev = run_logged(cfg);
        CHECK(actions_for(ev, "done") == std::vector<std::string>{"ingest", "analyze"});
        auto m = RunManifest::load(tmp / "run");
        CHECK(m.find("model")->status == StageStatus::pending);
        CHECK(kind_of([&] { report(tmp / "empty"); }) == ErrorKind::ManifestMissing);
        auto partial = report(tmp / "run");
        CHECK(partial.find("Table 1.") == std::string::npos);
        CHECK(partial.find("analyze") != std::string::npos);
    }

    TEST_CASE("a failing stage is recorded")
    {
        test::TempDir tmp;
        auto cfg = mini(tmp / "run");
        cfg.stages = {"ingest", "analyze"};
        auto dead = std::make_shared<test::ScriptedBackend>();
        std::vector<StageEvent> events;
        CHECK(kind_of([&] { run(cfg, dead, [&](const StageEvent& e) { events.push_back(e); }); }) ==
              ErrorKind::StageFailed);
        auto m = RunManifest::load(tmp / "run");
        CHECK(m.find("ingest")->status == StageStatus::done);
        CHECK(m.find("analyze")->status == StageStatus::failed);
        CHECK_FALSE(m.find("analyze")->error.empty());
        CHECK(events.back().action == "failed");
    }

    TEST_CASE("scoring directories without a pipeline run")
    {
        test::TempDir tmp;
        fs::create_directories(tmp / "ans");
        fs::create_directories(tmp / "out");
        io::write_file(tmp / "ans/a.config", "interface eth0\nip address 10.0.0.1/24\n! end\n");
        io::write_file(tmp / "out/a.config", "int eth0\nip address 10.0.0.1 255.255.255.0\n");
        io::write_file(tmp / "ans/b.config", "router rip\nnetwork 10.0.0.0/8\n");
        io::write_file(tmp / "out/b.config", "router rip\n");
        io::write_file(tmp / "ans/a.script", "call wait 5\nassert called wait\n");
        io::write_file(tmp / "out/a.script", "tester.wait(5);\n");
        io::write_file(tmp / "ans/c.config", "router ospf\n");
        io::write_json(tmp / "verdicts.json", Json{{"a", true}, {"b", false}});

        auto m = score_directories(tmp / "ans", tmp / "out", tmp / "verdicts.json");
        REQUIRE(m.at("reports").size() == 2);
        auto cfg = metrics::MetricReport::from_json(m.at("reports")[0]);
        CHECK(cfg.kind == metrics::LineKind::config);
        CHECK(cfg.counts.n_total == 3);
        CHECK(cfg.recall == doctest::Approx((1.0 + 0.5 + 0.0) / 3.0));
        CHECK(cfg.similarity == doctest::Approx((1.0 + 0.5 + 0.0) / 3.0));
        auto scr = metrics::MetricReport::from_json(m.at("reports")[1]);
        CHECK(m.at("validation").at("n_total") == 3);
        CHECK(m.at("validation").at("n_validated") == 1);
        CHECK(scr.recall == 0.5);
        std::string codes;
        for (const auto& w : m.at("warnings"))
            codes += w.at("code").get<std::string>() + " ";
        CHECK(codes.find("missing_output") != std::string::npos);
        CHECK(codes.find("missing_verdict") != std::string::npos);

        write_metrics_run(tmp / "mrun", m);
        auto text = report(tmp / "mrun");
        CHECK(text.find("Table 4. Artifact accuracy") != std::string::npos);
        CHECK(text.find("Table 1.") == std::string::npos);
        CHECK(kind_of([&] { score_directories(tmp / "nope", tmp / "out"); }) == ErrorKind::Io);
    }
}
