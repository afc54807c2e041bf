#include "conformgen/pipeline.hpp"

#include "conformgen/feedback_loops.hpp"
#include "conformgen/high_level_analysis.hpp"
#include "conformgen/low_level_modeling.hpp"
#include "conformgen/metrics.hpp"
#include "conformgen/spec_ingest.hpp"
#include "conformgen/testbed_sim.hpp"
#include "conformgen/text.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <set>

namespace conformgen::pipeline {

namespace fs = std::filesystem;

const std::vector<std::string>& stage_names()
{
    static const std::vector<std::string> names = {"ingest", "analyze", "model", "generate",
                                                   "verify", "forge",   "loop",  "metrics"};
    return names;
}

std::string canonical_stage(const std::string& name)
{
    if (name == "gen-cases")
        return "generate";
    const auto& n = stage_names();
    if (std::find(n.begin(), n.end(), name) == n.end())
        throw Error(ErrorKind::InvalidConfig, name, "unknown stage");
    return name;
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

std::optional<fs::path> opt_path(const Json& j, const std::string& key, const fs::path& base)
{
    if (!j.contains(key) || j.at(key).is_null())
        return std::nullopt;
    fs::path p = j.at(key).get<std::string>();
    return p.is_absolute() ? p : base / p;
}

Json path_json(const std::optional<fs::path>& p) { return p ? Json(p->generic_string()) : Json(nullptr); }

std::size_t stage_index(const std::string& name)
{
    const auto& n = stage_names();
    return static_cast<std::size_t>(std::find(n.begin(), n.end(), name) - n.begin());
}

} // namespace

RunConfig RunConfig::from_json(const Json& j, const fs::path& base_dir)
{
    Json merged = load_json_data("config/default_config.json");
    merged.merge_patch(j);
    RunConfig c;
    c.run_id = merged.value("run_id", c.run_id);
    c.spec_path = opt_path(merged, "spec", base_dir);
    c.run_dir = opt_path(merged, "run_dir", base_dir).value_or(base_dir / "runs/latest");
    for (const auto& s : merged.value("stages", Json::array()))
        c.stages.push_back(canonical_stage(s.get<std::string>()));
    auto be = merged.value("backend", Json::object());
    c.backend = llm::BackendDescriptor::from_json(be);
    c.backend.transcript_path = opt_path(be, "transcript_path", base_dir);
    auto gw = merged.value("gateway", Json::object());
    c.max_repairs = gw.value("max_repairs", c.max_repairs);
    if (c.max_repairs < 0)
        throw Error(ErrorKind::InvalidConfig, "max_repairs", "must be non-negative");
    auto an = merged.value("analysis", Json::object());
    c.max_iterations = an.value("max_iterations", c.max_iterations);
    c.exempt_zero_importance_appendix = an.value("exempt_zero_importance_appendix", true);
    if (c.max_iterations < 1)
        throw Error(ErrorKind::InvalidConfig, "max_iterations", "must be at least 1");
    c.strict_states = merged.value("modeling", Json::object()).value("strict_states", false);
    c.coverage = cases::CoverageConfig::from_json(merged.at("coverage"));
    c.forge = forge::ForgeOptions::from_json(merged.value("forge", Json::object()));
    c.loop = faults::LoopConfig::from_json(merged.value("loop", Json::object()));
    c.kb_path = opt_path(merged, "kb", base_dir);
    auto tb = merged.value("testbed", Json::object());
    c.testbed_profile = opt_path(tb, "profile", base_dir);
    c.fault_profile = opt_path(tb, "faults", base_dir);
    c.answers_dir = opt_path(merged.value("metrics", Json::object()), "answers", base_dir);
    c.data_dir = opt_path(merged, "data_dir", base_dir);
    return c;
}

RunConfig RunConfig::load(const fs::path& path)
{
    if (!fs::exists(path))
        throw Error(ErrorKind::InvalidConfig, path.string(), "config file not found");
    return from_json(io::read_json(path), path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

RunConfig RunConfig::defaults() { return from_json(Json::object()); }

Json RunConfig::to_json() const
{
    auto be = backend.to_json();
    be["transcript_path"] = path_json(backend.transcript_path);
    return {{"run_id", run_id},
            {"spec", path_json(spec_path)},
            {"run_dir", run_dir.generic_string()},
            {"stages", stages},
            {"backend", be},
            {"gateway", {{"max_repairs", max_repairs}}},
            {"analysis", {{"max_iterations", max_iterations}, {"exempt_zero_importance_appendix", exempt_zero_importance_appendix}}},
            {"modeling", {{"strict_states", strict_states}}},
            {"coverage", coverage.to_json()},
            {"forge", forge.to_json()},
            {"loop", loop.to_json()},
            {"kb", path_json(kb_path)},
            {"testbed", {{"profile", path_json(testbed_profile)}, {"faults", path_json(fault_profile)}}},
            {"metrics", {{"answers", path_json(answers_dir)}}},
            {"data_dir", path_json(data_dir)}};
}

std::vector<std::string> RunConfig::selected_stages() const
{
    if (stages.empty())
        return stage_names();
    std::vector<std::string> out;
    for (const auto& s : stage_names())
        if (std::find(stages.begin(), stages.end(), s) != stages.end())
            out.push_back(s);
    return out;
}

void RunConfig::validate() const
{
    auto sel = selected_stages();
    auto has = [&](const std::string& s) { return std::find(sel.begin(), sel.end(), s) != sel.end(); };
    auto must_exist = [](const std::optional<fs::path>& p, const std::string& what) {
        if (p && !fs::exists(*p))
            throw Error(ErrorKind::InvalidConfig, p->string(), what + " not found");
    };
    if (has("ingest")) {
        if (!spec_path)
            throw Error(ErrorKind::InvalidConfig, "spec", "ingest needs a spec path");
        must_exist(spec_path, "spec");
    }
    if (backend.mode == llm::BackendMode::replay && backend.transcript_path)
        must_exist(backend.transcript_path, "transcript");
    must_exist(kb_path, "knowledge base");
    must_exist(testbed_profile, "testbed profile");
    must_exist(fault_profile, "fault profile");
    must_exist(answers_dir, "answers directory");
    must_exist(data_dir, "data directory");
    coverage.validate();
    loop.validate();
}

// ---------------------------------------------------------------------------
// Manifest

std::string to_string(StageStatus s)
{
    switch (s) {
    case StageStatus::pending: return "pending";
    case StageStatus::done: return "done";
    case StageStatus::failed: return "failed";
    }
    return "pending";
}

namespace {

StageStatus status_from_string(const std::string& s)
{
    if (s == "done")
        return StageStatus::done;
    if (s == "failed")
        return StageStatus::failed;
    if (s == "pending")
        return StageStatus::pending;
    throw Error(ErrorKind::InvalidConfig, s, "unknown stage status");
}

} // namespace

StageRecord* RunManifest::find(const std::string& name)
{
    for (auto& s : stages)
        if (s.name == name)
            return &s;
    return nullptr;
}

const StageRecord* RunManifest::find(const std::string& name) const
{
    return const_cast<RunManifest*>(this)->find(name);
}

Json RunManifest::to_json() const
{
    Json st = Json::array();
    for (const auto& s : stages) {
        Json a = Json::object();
        for (const auto& [k, v] : s.artifacts)
            a[k] = v;
        Json r = {{"name", s.name},
                  {"status", to_string(s.status)},
                  {"duration_ms", s.duration_ms},
                  {"input_checksum", s.input_checksum},
                  {"artifacts", a}};
        if (!s.error.empty())
            r["error"] = s.error;
        st.push_back(r);
    }
    return {{"run_id", run_id}, {"stages", st}};
}

RunManifest RunManifest::from_json(const Json& j)
{
    RunManifest m;
    m.run_id = j.value("run_id", "");
    for (const auto& s : j.at("stages")) {
        StageRecord r;
        r.name = s.at("name").get<std::string>();
        r.status = status_from_string(s.value("status", "pending"));
        r.duration_ms = s.value("duration_ms", 0.0);
        r.input_checksum = s.value("input_checksum", "");
        auto artifacts = s.value("artifacts", Json::object());
        for (const auto& [k, v] : artifacts.items())
            r.artifacts[k] = v.get<std::string>();
        r.error = s.value("error", "");
        m.stages.push_back(std::move(r));
    }
    return m;
}

RunManifest RunManifest::load(const fs::path& run_dir)
{
    auto p = run_dir / "manifest.json";
    if (!fs::exists(p))
        throw Error(ErrorKind::ManifestMissing, p.string(), "run directory has no manifest");
    return from_json(io::read_json(p));
}

void RunManifest::save(const fs::path& run_dir) const { io::write_json(run_dir / "manifest.json", to_json()); }

bool verify_artifacts(const fs::path& run_dir, const StageRecord& record)
{
    for (const auto& [rel, sum] : record.artifacts) {
        auto p = run_dir / rel;
        if (!fs::exists(p) || text::sha256_hex(io::read_file(p)) != sum)
            return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Stages

namespace {

struct Context {
    const RunConfig& config;
    fs::path run_dir;
    std::shared_ptr<llm::CompletionBackend> backend;
    std::unique_ptr<llm::Gateway> gw;
    std::vector<std::string> written;

    llm::Gateway& gateway()
    {
        if (!gw) {
            if (!backend)
                backend = llm::make_backend(config.backend);
            gw = std::make_unique<llm::Gateway>(backend, config.max_repairs);
        }
        return *gw;
    }

    fs::path path(const std::string& rel) const { return run_dir / rel; }

    void json(const std::string& rel, const Json& v)
    {
        io::write_json(path(rel), v);
        written.push_back(rel);
    }
    void jsonl(const std::string& rel, const std::vector<Json>& v)
    {
        io::write_jsonl(path(rel), v);
        written.push_back(rel);
    }
    void textfile(const std::string& rel, const std::string& v)
    {
        io::write_file(path(rel), v);
        written.push_back(rel);
    }
    void kb(const std::string& dir, const forge::KnowledgeBase& kb)
    {
        kb.save(path(dir));
        for (const auto& f : {"task_info.json", "heuristics.json", "sops.json", "experience_pool.json",
                              "summary_index.json", "payloads.json", "few_shots.json"})
            written.push_back(dir + "/" + f);
    }

    Json read(const std::string& rel) const { return io::read_json(path(rel)); }
    std::vector<Json> read_lines(const std::string& rel) const { return io::read_jsonl(path(rel)); }

    ingest::SpecTree tree() const { return ingest::SpecTree::from_json(read("ingest/tree.json")); }
    analysis::SummarySet summaries() const { return analysis::SummarySet::from_json(read("analyze/summaries.json")); }
    analysis::ModuleSet modules() const { return analysis::ModuleSet::from_json(read("analyze/modules.json")); }
    std::vector<cases::TestCase> cases(const std::string& rel) const { return cases::read_cases(path(rel)); }

    analysis::AnalysisOptions analysis_options() const
    {
        analysis::AnalysisOptions o;
        o.max_iterations = config.max_iterations;
        o.exempt_zero_importance_appendix = config.exempt_zero_importance_appendix;
        o.data_dir = config.data_dir;
        return o;
    }
    cases::EngineOptions engine_options() const { return {std::nullopt, config.data_dir}; }
    forge::ForgeOptions forge_options() const
    {
        auto o = config.forge;
        o.run_id = config.run_id;
        o.data_dir = config.data_dir;
        return o;
    }
    testbed::Session session() const
    {
        auto profile = config.testbed_profile ? testbed::TestbedProfile::from_json(io::read_json(*config.testbed_profile))
                                              : testbed::TestbedProfile::defaults(config.data_dir);
        std::optional<testbed::FaultProfile> faults;
        if (config.fault_profile)
            faults = testbed::FaultProfile::load(*config.fault_profile);
        return testbed::Session(testbed::CliGrammar::defaults(config.data_dir),
                                testbed::TesterApiRegistry::defaults(config.data_dir), std::move(profile),
                                std::move(faults));
    }
};

Json warnings_json(const Warnings& ws)
{
    Json arr = Json::array();
    for (const auto& w : ws)
        arr.push_back({{"code", w.code}, {"message", w.message}});
    return arr;
}

std::vector<Json> cases_json(const std::vector<cases::TestCase>& cs)
{
    std::vector<Json> out;
    for (const auto& c : cs)
        out.push_back(c.to_json());
    return out;
}

void stage_ingest(Context& ctx)
{
    const auto& spec = *ctx.config.spec_path;
    ingest::RawSpecDocument raw{spec.stem().string(), io::read_file(spec)};
    auto tree = ingest::ingest(raw, ingest::CleaningRules::defaults(ctx.config.data_dir),
                               ingest::TreeOptions::defaults(ctx.config.data_dir));
    ctx.json("ingest/tree.json", tree.to_json());
}

void stage_analyze(Context& ctx)
{
    auto tree = ctx.tree();
    auto opts = ctx.analysis_options();
    auto catalog = analysis::AgentCatalog::defaults(ctx.config.data_dir);
    auto summaries = analysis::summarize_sections(tree, ctx.gateway(), opts);
    auto modules = analysis::form_modules(tree, summaries, catalog, ctx.gateway(), opts);
    modules = analysis::complete_modules(tree, summaries, std::move(modules), catalog, ctx.gateway(), opts);
    ctx.json("analyze/summaries.json", summaries.to_json());
    ctx.json("analyze/modules.json", modules.to_json());
}

void stage_model(Context& ctx)
{
    auto tree = ctx.tree();
    auto summaries = ctx.summaries();
    auto modules = ctx.modules();
    auto toolkit = modeling::Toolkit::defaults(ctx.config.data_dir);
    modeling::ModelingOptions opts;
    opts.strict_states = ctx.config.strict_states;
    opts.data_dir = ctx.config.data_dir;
    std::vector<modeling::ModuleModel> models;
    for (const auto& m : modules.modules)
        models.push_back(modeling::model_module(m, tree, summaries, toolkit, ctx.gateway(), opts));
    Json arr = Json::array();
    for (const auto& m : models)
        arr.push_back(m.to_json());
    std::vector<Json> points;
    for (const auto& p : modeling::enumerate_points(models))
        points.push_back(p.to_json());
    ctx.json("model/models.json", {{"models", arr}});
    ctx.jsonl("model/points.jsonl", points);
}

void stage_generate(Context& ctx)
{
    auto tree = ctx.tree();
    auto summaries = ctx.summaries();
    auto modules = ctx.modules();
    auto examples = cases::default_examples(ctx.config.data_dir);
    Warnings warnings;
    std::vector<cases::TestCase> out;
    for (const auto& j : ctx.read_lines("model/points.jsonl")) {
        auto point = modeling::TestingPoint::from_json(j);
        auto context = cases::build_context(point, tree, summaries, modules);
        out.push_back(cases::generate_case(point, context, examples, ctx.gateway(), tree, warnings, ctx.engine_options()));
    }
    ctx.jsonl("generate/cases.jsonl", cases_json(out));
    ctx.json("generate/warnings.json", warnings_json(warnings));
}

void stage_verify(Context& ctx)
{
    auto tree = ctx.tree();
    auto summaries = ctx.summaries();
    auto generated = ctx.cases("generate/cases.jsonl");
    const auto& cov = ctx.config.coverage;
    auto key = cases::select_key_sections(summaries, cov);
    auto breadth = cases::compute_breadth(generated, key);
    auto depth = cases::judge_all(tree, key, generated, ctx.gateway(), ctx.engine_options());
    Warnings warnings;
    auto refined = cases::refine(tree, summaries, key, generated, breadth, depth, cov, ctx.gateway(), warnings,
                                 ctx.engine_options());
    auto all = generated;
    all.insert(all.end(), refined.new_cases.begin(), refined.new_cases.end());
    ctx.jsonl("verify/cases.jsonl", cases_json(all));
    ctx.json("verify/coverage.json", {{"initial_breadth", breadth.to_json()},
                                      {"initial_depth", depth.to_json()},
                                      {"final_breadth", refined.final_breadth.to_json()},
                                      {"final_depth", refined.final_depth.to_json()},
                                      {"refinement_rounds", refined.rounds},
                                      {"breadth_history", refined.breadth_history},
                                      {"boundary_history", refined.boundary_history},
                                      {"warnings", warnings_json(warnings)}});
}

Json outcome_json(const std::string& case_id, const loops::SmallLoopResult& r)
{
    if (auto* p = std::get_if<loops::Pass>(&r))
        return {{"case_id", case_id}, {"status", "pass"}, {"rounds", p->rounds}, {"attempt", p->attempt}};
    const auto& t = std::get<loops::EscalationTicket>(r);
    return {{"case_id", case_id}, {"status", "escalated"}, {"suspected_origin", loops::to_string(t.suspected_origin)}};
}

forge::KnowledgeBase initial_kb(const Context& ctx)
{
    auto kb = ctx.config.kb_path ? forge::KnowledgeBase::load(*ctx.config.kb_path)
                                 : forge::KnowledgeBase::defaults(ctx.config.data_dir);
    return kb;
}

void stage_forge(Context& ctx)
{
    auto cs = ctx.cases("verify/cases.jsonl");
    auto kb = initial_kb(ctx);
    auto session = ctx.session();
    kb.validate(&session.profile());
    forge::ArtifactAgent agent(kb, ctx.gateway(), ctx.forge_options());
    std::vector<Json> results, artifacts, tickets, traces;
    for (const auto& tc : cs) {
        loops::LoopTrace trace;
        auto r = loops::run_small_loop(tc, agent, session, ctx.config.loop, &trace);
        results.push_back(outcome_json(tc.case_id, r));
        traces.push_back(trace.to_json());
        if (auto* p = std::get_if<loops::Pass>(&r))
            artifacts.push_back(p->artifact.to_json());
        else
            tickets.push_back(std::get<loops::EscalationTicket>(r).to_json());
    }
    ctx.jsonl("forge/results.jsonl", results);
    ctx.jsonl("forge/artifacts.jsonl", artifacts);
    ctx.jsonl("forge/tickets.jsonl", tickets);
    ctx.jsonl("forge/traces.jsonl", traces);
    ctx.kb("forge/kb", kb);
}

loops::EscalationTicket ticket_from_json(const Json& j)
{
    loops::EscalationTicket t;
    t.case_id = j.at("case_id").get<std::string>();
    auto o = j.at("suspected_origin").get<std::string>();
    for (auto s : {loops::SuspectedOrigin::dut_defect_or_docs, loops::SuspectedOrigin::tester_limitation,
                   loops::SuspectedOrigin::test_case_flaw})
        if (loops::to_string(s) == o)
            t.suspected_origin = s;
    for (const auto& a : j.at("history")) {
        loops::AttemptRecord rec;
        rec.attempt = a.at("attempt").get<int>();
        rec.rounds = a.at("rounds").get<int>();
        for (const auto& rf : a.at("round_faults")) {
            std::vector<faults::FaultReport> fr;
            for (const auto& f : rf)
                fr.push_back(faults::FaultReport::from_json(f));
            rec.round_faults.push_back(std::move(fr));
        }
        t.history.push_back(std::move(rec));
    }
    return t;
}

void stage_loop(Context& ctx)
{
    auto tree = ctx.tree();
    std::map<std::string, cases::TestCase> by_id;
    for (auto& c : ctx.cases("verify/cases.jsonl"))
        by_id.emplace(c.case_id, c);
    auto kb = forge::KnowledgeBase::load(ctx.path("forge/kb"));
    auto session = ctx.session();
    forge::ArtifactAgent agent(kb, ctx.gateway(), ctx.forge_options());
    Warnings warnings;
    std::vector<Json> outcomes, tried, artifacts;
    for (const auto& tj : ctx.read_lines("forge/tickets.jsonl")) {
        auto ticket = ticket_from_json(tj);
        const auto& original = by_id.at(ticket.case_id);
        auto regenerate = [&](const cases::TestCase& tc, const std::string& summary) {
            return cases::regenerate_case(tc, summary, tree, ctx.gateway(), warnings, ctx.engine_options());
        };
        auto run_loop = [&](const cases::TestCase& tc) {
            return loops::run_small_loop(tc, agent, session, ctx.config.loop);
        };
        auto result = loops::escalate(ticket, original, regenerate, run_loop, ctx.config.loop.max_regenerations);
        if (auto* r = std::get_if<loops::Resolved>(&result)) {
            for (const auto& c : r->new_cases)
                tried.push_back(c.to_json());
            for (const auto& p : r->passes)
                artifacts.push_back(p.artifact.to_json());
            outcomes.push_back({{"case_id", ticket.case_id},
                                {"disposition", loops::to_string(r->ticket.disposition)},
                                {"suspected_origin", loops::to_string(r->ticket.suspected_origin)},
                                {"regeneration_attempts", r->ticket.regeneration_attempts},
                                {"resolved_by", r->new_cases.empty() ? "" : r->new_cases.front().case_id}});
        } else {
            auto& m = std::get<loops::ManualReview>(result);
            for (const auto& c : m.tried)
                tried.push_back(c.to_json());
            outcomes.push_back({{"case_id", ticket.case_id},
                                {"disposition", loops::to_string(m.ticket.disposition)},
                                {"suspected_origin", loops::to_string(m.ticket.suspected_origin)},
                                {"regeneration_attempts", m.ticket.regeneration_attempts},
                                {"ticket", m.ticket.to_json()}});
        }
    }
    ctx.jsonl("loop/outcomes.jsonl", outcomes);
    ctx.jsonl("loop/cases.jsonl", tried);
    ctx.jsonl("loop/artifacts.jsonl", artifacts);
    ctx.json("loop/warnings.json", warnings_json(warnings));
    ctx.kb("loop/kb", kb);
}

std::vector<std::string> file_lines(const fs::path& p)
{
    return fs::exists(p) ? text::split_lines(io::read_file(p)) : std::vector<std::string>{};
}

Json metrics_json(const std::vector<bool>& verdicts, std::vector<metrics::PairReport> config_pairs,
                  std::vector<metrics::PairReport> script_pairs, bool verdicts_known, Warnings warnings)
{
    Json reports = Json::array();
    if (!config_pairs.empty())
        reports.push_back(metrics::aggregate(metrics::LineKind::config, std::move(config_pairs), verdicts_known).to_json());
    if (!script_pairs.empty())
        reports.push_back(metrics::aggregate(metrics::LineKind::script, std::move(script_pairs), verdicts_known).to_json());
    if (reports.empty())
        warnings.push_back({"no_reference_answers", "no answer files matched; R and SIM not reported"});
    Json validation = nullptr;
    if (verdicts_known && !verdicts.empty()) {
        auto n = static_cast<std::size_t>(std::count(verdicts.begin(), verdicts.end(), true));
        validation = {{"n_total", verdicts.size()}, {"n_validated", n},
                      {"validation_rate", metrics::validation_rate(verdicts)}};
    }
    return {{"validation", validation}, {"reports", reports}, {"warnings", warnings_json(warnings)}};
}

std::string metrics_table(const Json& m)
{
    std::vector<metrics::MetricReport> reports;
    for (const auto& r : m.at("reports"))
        reports.push_back(metrics::MetricReport::from_json(r));
    std::string out = metrics::render_table(reports);
    if (!m.at("validation").is_null()) {
        char buf[128];
        const auto& v = m.at("validation");
        std::snprintf(buf, sizeof buf, "Validated %zu of %zu artifacts (VR %.1f%%)\n", v.at("n_validated").get<std::size_t>(),
                      v.at("n_total").get<std::size_t>(), v.at("validation_rate").get<double>() * 100.0);
        out += buf;
    }
    return out;
}

void stage_metrics(Context& ctx)
{
    auto cs = ctx.cases("verify/cases.jsonl");
    std::map<std::string, testbed::ExecutableArtifact> passed;
    for (const auto& j : ctx.read_lines("forge/artifacts.jsonl")) {
        auto a = testbed::ExecutableArtifact::from_json(j);
        passed.emplace(a.case_id, a);
    }
    // Artifacts of regenerated cases stand in for the case they replace.
    std::map<std::string, std::string> replaced_by;
    for (const auto& o : ctx.read_lines("loop/outcomes.jsonl"))
        if (o.value("resolved_by", std::string()) != "")
            replaced_by[o.at("resolved_by").get<std::string>()] = o.at("case_id").get<std::string>();
    for (const auto& j : ctx.read_lines("loop/artifacts.jsonl")) {
        auto a = testbed::ExecutableArtifact::from_json(j);
        auto it = replaced_by.find(a.case_id);
        passed.emplace(it == replaced_by.end() ? a.case_id : it->second, a);
    }
    std::vector<bool> verdicts;
    std::vector<metrics::PairReport> cfg, scr;
    for (const auto& c : cs) {
        auto it = passed.find(c.case_id);
        verdicts.push_back(it != passed.end());
        if (!ctx.config.answers_dir || it == passed.end())
            continue;
        auto base = *ctx.config.answers_dir / c.case_id;
        if (fs::exists(base.string() + ".config"))
            cfg.push_back(metrics::compare(c.case_id, file_lines(base.string() + ".config"), it->second.dut_config,
                                           metrics::LineKind::config, true));
        if (fs::exists(base.string() + ".script"))
            scr.push_back(metrics::compare(c.case_id, file_lines(base.string() + ".script"),
                                           it->second.tester_script, metrics::LineKind::script, true));
    }
    auto m = metrics_json(verdicts, std::move(cfg), std::move(scr), true, {});
    ctx.json("metrics/report.json", m);
    ctx.textfile("metrics/table.txt", metrics_table(m));
}

using StageFn = void (*)(Context&);

StageFn stage_fn(const std::string& name)
{
    static const std::map<std::string, StageFn> fns = {
        {"ingest", stage_ingest}, {"analyze", stage_analyze}, {"model", stage_model}, {"generate", stage_generate},
        {"verify", stage_verify}, {"forge", stage_forge},     {"loop", stage_loop},   {"metrics", stage_metrics}};
    return fns.at(name);
}

std::string input_checksum(const RunConfig& config, const RunManifest& manifest, const std::string& stage)
{
    auto cfg = config.to_json();
    cfg.erase("stages");
    cfg.erase("run_dir");
    std::string material = cfg.dump();
    if (stage == "ingest" && config.spec_path)
        material += text::sha256_hex(io::read_file(*config.spec_path));
    for (std::size_t i = 0; i < stage_index(stage); ++i) {
        const auto* r = manifest.find(stage_names()[i]);
        if (!r)
            continue;
        material += "|" + r->name;
        for (const auto& [k, v] : r->artifacts)
            material += ":" + k + "=" + v;
    }
    return text::sha256_hex(material);
}

RunManifest fresh_manifest(const std::string& run_id)
{
    RunManifest m;
    m.run_id = run_id;
    for (const auto& s : stage_names())
        m.stages.push_back(StageRecord{s, StageStatus::pending, 0.0, {}, {}, {}});
    return m;
}

} // namespace

RunManifest run(const RunConfig& config, std::shared_ptr<llm::CompletionBackend> backend, const ProgressFn& progress)
{
    config.validate();
    fs::create_directories(config.run_dir);
    auto manifest = fs::exists(config.run_dir / "manifest.json") ? RunManifest::load(config.run_dir)
                                                                 : fresh_manifest(config.run_id);
    for (const auto& s : stage_names())
        if (!manifest.find(s))
            manifest.stages.push_back(StageRecord{s, StageStatus::pending, 0.0, {}, {}, {}});
    auto notify = [&](const std::string& stage, const std::string& action, const std::string& detail = {}) {
        if (progress)
            progress({stage, action, detail});
    };

    Context ctx{config, config.run_dir, std::move(backend), nullptr, {}};
    auto selected = config.selected_stages();
    for (const auto& stage : selected) {
        auto idx = stage_index(stage);
        for (std::size_t i = 0; i < idx; ++i) {
            const auto& pred = stage_names()[i];
            const auto* r = manifest.find(pred);
            if (!r || r->status != StageStatus::done || !verify_artifacts(config.run_dir, *r))
                throw Error(ErrorKind::MissingPredecessorArtifact, stage,
                            "stage " + pred + " has no completed artifacts in " + config.run_dir.string());
        }
        auto sum = input_checksum(config, manifest, stage);
        auto* rec = manifest.find(stage);
        if (rec->status == StageStatus::done && rec->input_checksum == sum && verify_artifacts(config.run_dir, *rec)) {
            notify(stage, "skip", "unchanged");
            continue;
        }
        // Everything downstream is stale once this stage reruns.
        for (std::size_t i = idx; i < stage_names().size(); ++i) {
            auto* r = manifest.find(stage_names()[i]);
            r->status = StageStatus::pending;
            r->artifacts.clear();
            r->input_checksum.clear();
            r->error.clear();
        }
        fs::remove_all(config.run_dir / stage);
        fs::create_directories(config.run_dir / stage);
        notify(stage, "run");
        ctx.written.clear();
        auto t0 = std::chrono::steady_clock::now();
        try {
            stage_fn(stage)(ctx);
        } catch (const std::exception& e) {
            rec->status = StageStatus::failed;
            rec->error = e.what();
            manifest.save(config.run_dir);
            notify(stage, "failed", e.what());
            throw Error(ErrorKind::StageFailed, stage, e.what());
        }
        rec->duration_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        rec->status = StageStatus::done;
        rec->input_checksum = sum;
        for (const auto& rel : ctx.written)
            rec->artifacts[rel] = text::sha256_hex(io::read_file(config.run_dir / rel));
        manifest.save(config.run_dir);
        notify(stage, "done", std::to_string(ctx.written.size()) + " files");
    }
    return manifest;
}

// ---------------------------------------------------------------------------
// Metrics without a pipeline run

Json score_directories(const fs::path& answers, const fs::path& outputs, const std::optional<fs::path>& verdicts_path)
{
    if (!fs::is_directory(answers))
        throw Error(ErrorKind::Io, answers.string(), "answers directory not found");
    if (!fs::is_directory(outputs))
        throw Error(ErrorKind::Io, outputs.string(), "outputs directory not found");
    Json verdicts = verdicts_path ? io::read_json(*verdicts_path) : Json::object();
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(answers))
        if (e.is_regular_file() && (e.path().extension() == ".config" || e.path().extension() == ".script"))
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    Warnings warnings;
    std::vector<metrics::PairReport> cfg, scr;
    std::set<std::string> names;
    for (const auto& f : files) {
        auto name = f.stem().string();
        auto kind = f.extension() == ".config" ? metrics::LineKind::config : metrics::LineKind::script;
        auto out = outputs / f.filename();
        if (!fs::exists(out))
            warnings.push_back({"missing_output", f.filename().string() + " has no generated counterpart"});
        bool validated = verdicts.value(name, false);
        if (verdicts_path && !verdicts.contains(name))
            warnings.push_back({"missing_verdict", name + " has no verdict; counted as not validated"});
        auto p = metrics::compare(name, file_lines(f), file_lines(out), kind, validated);
        (kind == metrics::LineKind::config ? cfg : scr).push_back(std::move(p));
        names.insert(name);
    }
    std::vector<bool> v;
    for (const auto& n : names)
        v.push_back(verdicts.value(n, false));
    return metrics_json(v, std::move(cfg), std::move(scr), verdicts_path.has_value(), std::move(warnings));
}

RunManifest write_metrics_run(const fs::path& run_dir, const Json& m, const std::string& run_id)
{
    fs::create_directories(run_dir / "metrics");
    auto manifest = fresh_manifest(run_id);
    io::write_json(run_dir / "metrics/report.json", m);
    io::write_file(run_dir / "metrics/table.txt", metrics_table(m));
    auto* rec = manifest.find("metrics");
    rec->status = StageStatus::done;
    for (const auto& rel : {"metrics/report.json", "metrics/table.txt"})
        rec->artifacts[rel] = text::sha256_hex(io::read_file(run_dir / rel));
    manifest.save(run_dir);
    return manifest;
}

// ---------------------------------------------------------------------------
// Report

namespace {

std::string row(const std::vector<std::string>& cells, const std::vector<int>& widths)
{
    std::string out;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        auto w = static_cast<std::size_t>(i < widths.size() ? widths[i] : 10);
        auto c = cells[i];
        if (i == 0)
            out += c + std::string(c.size() < w ? w - c.size() : 1, ' ');
        else
            out += std::string(c.size() < w ? w - c.size() : 1, ' ') + c;
    }
    return out + "\n";
}

std::string pct(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f%%", v * 100.0);
    return buf;
}

std::string num(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", v);
    return buf;
}

bool done(const RunManifest& m, const std::string& stage)
{
    const auto* r = m.find(stage);
    return r && r->status == StageStatus::done;
}

} // namespace

std::string report(const fs::path& run_dir)
{
    auto m = RunManifest::load(run_dir);
    std::string out = "Run " + m.run_id + "\n\n";
    for (const auto& s : m.stages)
        out += row({s.name, to_string(s.status), s.status == StageStatus::done ? num(s.duration_ms) + " ms" : ""},
                   {10, 10, 14});

    if (done(m, "ingest") && done(m, "analyze") && done(m, "model")) {
        auto tree = ingest::SpecTree::from_json(io::read_json(run_dir / "ingest/tree.json"));
        auto mods = analysis::ModuleSet::from_json(io::read_json(run_dir / "analyze/modules.json"));
        auto points = io::read_jsonl(run_dir / "model/points.jsonl");
        std::vector<cases::TestCase> cs;
        if (done(m, "verify"))
            cs = cases::read_cases(run_dir / "verify/cases.jsonl");
        else if (done(m, "generate"))
            cs = cases::read_cases(run_dir / "generate/cases.jsonl");
        std::map<std::string, std::string> point_origin;
        for (const auto& p : points)
            point_origin[p.at("point_id").get<std::string>()] = p.value("origin", "");
        std::map<std::string, int> by_origin;
        for (const auto& c : cs)
            ++by_origin[c.provenance == "generation" ? point_origin[c.point_id] : c.provenance];

        out += "\nTable 1. Specification structure and generated cases\n";
        std::vector<int> w = {28, 10, 9, 8, 8};
        out += row({"Spec", "Sections", "Modules", "Points", "Cases"}, w);
        out += row({tree.metadata.spec_number.empty() ? tree.metadata.title : "RFC " + tree.metadata.spec_number,
                    std::to_string(tree.size()), std::to_string(mods.modules.size()), std::to_string(points.size()),
                    std::to_string(cs.size())},
                   w);
        out += "\nCases per origin\n";
        for (const auto& o : {"field", "fsm", "time_sequence", "protocol_specific", "supplement", "depth"})
            out += row({o, std::to_string(by_origin[o])}, {28, 8});
        out += "\nModules\n";
        for (const auto& mod : mods.modules)
            out += row({mod.module_name, analysis::to_string(mod.assigned_agent), std::to_string(mod.section_numbers.size()) + " sections"},
                       {28, 20, 14});
        out += "Module formation iterations: " + std::to_string(mods.iteration_count) + "\n";
    }

    if (done(m, "verify")) {
        auto cov = io::read_json(run_dir / "verify/coverage.json");
        auto ib = cases::BreadthReport::from_json(cov.at("initial_breadth"));
        auto fb = cases::BreadthReport::from_json(cov.at("final_breadth"));
        auto id = cases::DepthReport::from_json(cov.at("initial_depth"));
        auto fd = cases::DepthReport::from_json(cov.at("final_depth"));
        out += "\nTable 2. Key-section coverage\n";
        std::vector<int> w = {14, 8, 9, 10, 9, 10};
        out += row({"Pass", "Key", "Covered", "Breadth", "Basic", "Boundary"}, w);
        out += row({"generation", std::to_string(ib.key_sections.size()), std::to_string(ib.covered.size()),
                    pct(ib.coverage_rate), num(id.mean_basic()), num(id.mean_boundary())},
                   w);
        out += row({"refined", std::to_string(fb.key_sections.size()), std::to_string(fb.covered.size()),
                    pct(fb.coverage_rate), num(fd.mean_basic()), num(fd.mean_boundary())},
                   w);
        out += "Refinement rounds: " + std::to_string(cov.value("refinement_rounds", 0)) + "\n";
    }

    if (done(m, "forge")) {
        auto results = io::read_jsonl(run_dir / "forge/results.jsonl");
        int first = 0, fixed = 0, escalated = 0;
        double rounds = 0;
        for (const auto& r : results) {
            if (r.at("status") == "pass") {
                (r.at("rounds").get<int>() == 1 && r.at("attempt").get<int>() == 1 ? first : fixed)++;
                rounds += r.at("rounds").get<int>();
            } else {
                ++escalated;
            }
        }
        int resolved = 0, manual = 0;
        std::vector<Json> outcomes;
        if (done(m, "loop")) {
            outcomes = io::read_jsonl(run_dir / "loop/outcomes.jsonl");
            for (const auto& o : outcomes)
                (o.at("disposition") == "manual_review" ? manual : resolved)++;
        }
        out += "\nTable 3. Feedback loop outcomes\n";
        std::vector<int> w = {8, 10, 12, 11, 10, 8};
        out += row({"Cases", "Round 1", "After fix", "Escalated", "Regen ok", "Manual"}, w);
        out += row({std::to_string(results.size()), std::to_string(first), std::to_string(fixed),
                    std::to_string(escalated), std::to_string(resolved), std::to_string(manual)},
                   w);
        if (first + fixed > 0)
            out += "Mean rounds to pass: " + num(rounds / (first + fixed)) + "\n";
        if (!outcomes.empty()) {
            out += "\nEscalations\n";
            for (const auto& o : outcomes)
                out += row({o.at("case_id").get<std::string>(), o.at("suspected_origin").get<std::string>(),
                            o.at("disposition").get<std::string>()},
                           {24, 22, 18});
        }
    }

    if (done(m, "metrics")) {
        out += "\nTable 4. Artifact accuracy\n";
        out += io::read_file(run_dir / "metrics/table.txt");
    }
    return out;
}

} // namespace conformgen::pipeline
