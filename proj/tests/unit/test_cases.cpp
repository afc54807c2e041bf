#include "conformgen/testcase_engine.hpp"
#include "conformgen/text.hpp"
#include "support.hpp"

#include "doctest.h"

#include <random>
#include <set>

using namespace conformgen;
using namespace conformgen::cases;
using analysis::Classification;

namespace {

analysis::SectionSummary sum(const std::string& n, Classification c, int importance)
{
    analysis::SectionSummary s;
    s.section_number = n;
    s.classification = c;
    s.test_importance = importance;
    s.summary = "Summary of " + n + ".";
    return s;
}

TestCase tc(const std::string& id, std::vector<std::string> refs)
{
    TestCase c;
    c.case_id = id;
    c.title = "Case " + id;
    c.objective = "Obj";
    c.steps = {"step"};
    c.expected_results = {"result"};
    c.reference_sections = std::move(refs);
    return c;
}

Json case_json(const std::string& title, std::vector<std::string> refs)
{
    return {{"title", title},
            {"objective", "O"},
            {"steps", {"s1"}},
            {"expected_results", {"r1"}},
            {"reference_sections", refs},
            {"topology", "DUT"}};
}

Json depth_json(double basic, double boundary)
{
    return {{"basic_function_score", basic}, {"boundary_case_score", boundary}, {"rationale", "r"}, {"suggestions", {"more"}}};
}

std::string section_attr(const std::string& prompt)
{
    static const std::regex re(R"(number="([^"]+)\")");
    std::smatch m;
    if (std::regex_search(prompt, m, re))
        return m[1];
    static const std::regex re2(R"(section ([0-9A-Z.]+))");
    return std::regex_search(prompt, m, re2) ? m[1].str() : std::string();
}

const std::vector<Classification> kClasses = {Classification::functional, Classification::configuration,
                                              Classification::descriptive, Classification::appendix};

} // namespace

TEST_SUITE("cases")
{
    TEST_CASE("default coverage configuration")
    {
        auto c = CoverageConfig::defaults();
        CHECK(c.weight(Classification::functional) == 1.0);
        CHECK(c.weight(Classification::configuration) == 0.8);
        CHECK(c.weight(Classification::descriptive) == 0.4);
        CHECK(c.weight(Classification::appendix) == 0.2);
        CHECK(c.threshold == 50.0);
        CHECK(CoverageConfig::from_json(c.to_json()).to_json() == c.to_json());
    }

    TEST_CASE("configuration validation")
    {
        auto j = CoverageConfig::defaults().to_json();
        auto bad = j;
        bad["weight_map"]["functional"] = 1.5;
        CHECK_THROWS_AS(CoverageConfig::from_json(bad), Error);
        bad = j;
        bad["weight_map"]["normative"] = 0.5;
        CHECK_THROWS_AS(CoverageConfig::from_json(bad), Error);
        bad = j;
        bad["threshold"] = -1;
        CHECK_THROWS_AS(CoverageConfig::from_json(bad), Error);
        CoverageConfig partial;
        partial.weight_map[Classification::functional] = 1.0;
        try {
            compute_score(sum("1", Classification::appendix, 50), partial);
            FAIL("expected UnknownClassification");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::UnknownClassification);
        }
    }

    TEST_CASE("key sections and breadth agree with a direct oracle")
    {
        std::mt19937 rng(11);
        for (int trial = 0; trial < 200; ++trial) {
            CoverageConfig cfg;
            for (auto c : kClasses)
                cfg.weight_map[c] = (rng() % 11) / 10.0;
            cfg.threshold = static_cast<double>(rng() % 101);
            analysis::SummarySet sums;
            std::size_t n = 1 + rng() % 15;
            for (std::size_t i = 1; i <= n; ++i)
                sums.items.push_back(sum(std::to_string(i), kClasses[rng() % 4], static_cast<int>(rng() % 101)));
            std::vector<std::string> expect_keys;
            for (const auto& s : sums.items)
                if (s.test_importance * cfg.weight_map[s.classification] >= cfg.threshold)
                    expect_keys.push_back(s.section_number);
            auto keys = select_key_sections(sums, cfg);
            std::vector<std::string> got_keys;
            for (const auto& k : keys)
                got_keys.push_back(k.section);
            CHECK(got_keys == expect_keys);

            std::vector<TestCase> suite;
            std::set<std::string> referenced;
            int n_cases = static_cast<int>(rng() % 8);
            for (int c = 0; c < n_cases; ++c) {
                std::vector<std::string> refs;
                int n_refs = 1 + static_cast<int>(rng() % 3);
                for (int r = 0; r < n_refs; ++r)
                    refs.push_back(std::to_string(1 + rng() % n));
                referenced.insert(refs.begin(), refs.end());
                suite.push_back(tc("c" + std::to_string(c), refs));
            }
            std::size_t hit = 0;
            for (const auto& k : expect_keys)
                hit += referenced.count(k);
            auto b = compute_breadth(suite, keys);
            CHECK(b.covered.size() == hit);
            CHECK(b.covered.size() + b.uncovered.size() == expect_keys.size());
            CHECK(b.empty_key_set == expect_keys.empty());
            double rate = expect_keys.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(expect_keys.size());
            CHECK(b.coverage_rate == doctest::Approx(rate));
            CHECK(score_external_suite(suite, sums, cfg).to_json() == b.to_json());
        }
    }

    TEST_CASE("a multi-reference case counts in each section")
    {
        std::vector<TestCase> suite = {tc("a", {"1", "2", "2"}), tc("b", {"2"})};
        auto g = group_by_section(suite);
        CHECK(g["1"].size() == 1);
        CHECK(g["2"].size() == 2);
    }

    TEST_CASE("depth of an uncovered section costs no call")
    {
        auto tree = test::make_tree({"1"});
        auto backend = std::make_shared<test::ScriptedBackend>();
        llm::Gateway gw(backend);
        auto e = judge_depth(tree.at("1"), {}, gw);
        CHECK(backend->prompts.empty());
        CHECK(e.basic_function_score == 0.0);
        CHECK(e.boundary_case_score == 0.0);
        CHECK(e.suggestions == std::vector<std::string>{"no coverage"});
    }

    TEST_CASE("depth scores out of range are repaired")
    {
        auto tree = test::make_tree({"1"});
        auto backend = std::make_shared<test::ScriptedBackend>(
            std::vector<std::string>{depth_json(120, 50).dump(), depth_json(95, 80).dump()});
        llm::Gateway gw(backend);
        auto c = tc("a", {"1"});
        auto e = judge_depth(tree.at("1"), {&c}, gw);
        CHECK(e.basic_function_score == 95.0);
        CHECK(e.case_count == 1);
        CHECK(backend->prompts.size() == 2);
        CHECK(backend->prompts[0].find("[a] Case a") != std::string::npos);
    }

    TEST_CASE("generation checks preconditions and restores dropped sections")
    {
        auto tree = test::make_tree({"1", "2", "3"});
        modeling::TestingPoint p;
        p.point_id = "fsm-0001";
        p.module_name = "M";
        p.title = "T";
        p.objective = "O";
        p.reference_sections = {"1", "3"};
        auto backend = std::make_shared<test::ScriptedBackend>(std::vector<std::string>{case_json("Made", {"3", "7"}).dump()});
        llm::Gateway gw(backend);
        Warnings ws;
        auto c = generate_case(p, {}, default_examples(), gw, tree, ws);
        CHECK(c.case_id == "TC-fsm-0001");
        CHECK(c.case_id == case_id_for_point(p.point_id));
        CHECK(c.reference_sections == std::vector<std::string>{"1", "3"});
        CHECK(c.point_id == "fsm-0001");
        CHECK(c.module_name == "M");
        std::set<std::string> codes;
        for (const auto& w : ws)
            codes.insert(w.code);
        CHECK(codes == std::set<std::string>{"reference_drift", "unresolved_section"});

        auto empty = p;
        empty.objective = "  ";
        CHECK_THROWS_AS(generate_case(empty, {}, {}, gw, tree, ws), Error);
        auto nosec = p;
        nosec.reference_sections.clear();
        CHECK_THROWS_AS(generate_case(nosec, {}, {}, gw, tree, ws), Error);
        CHECK(backend->prompts.size() == 1);
    }

    TEST_CASE("generation prompt carries examples and context")
    {
        auto tree = test::make_tree({"1"});
        analysis::SummarySet sums;
        sums.items.push_back(sum("1", Classification::functional, 80));
        analysis::ModuleSet mods;
        mods.modules.push_back({"M", "Module description.", analysis::AgentKind::fsm, {"1"}});
        modeling::TestingPoint p;
        p.point_id = "x";
        p.module_name = "M";
        p.title = "T";
        p.objective = "O";
        p.reference_sections = {"1"};
        auto ctx = build_context(p, tree, sums, mods);
        CHECK(ctx.module_description == "Module description.");
        CHECK(ctx.section_summaries == "- 1 Section 1: Summary of 1.");
        auto examples = default_examples();
        REQUIRE_FALSE(examples.empty());
        auto backend = std::make_shared<test::ScriptedBackend>(std::vector<std::string>{case_json("Made", {"1"}).dump()});
        llm::Gateway gw(backend);
        Warnings ws;
        generate_case(p, ctx, examples, gw, tree, ws);
        CHECK(backend->prompts[0].find(examples.front().title) != std::string::npos);
        CHECK(backend->prompts[0].find("Summary of 1.") != std::string::npos);
    }

    TEST_CASE("refinement supplements breadth, deepens shallow sections and re-verifies")
    {
        auto tree = test::make_tree({"1", "2", "3"});
        analysis::SummarySet sums;
        for (auto n : {"1", "2", "3"})
            sums.items.push_back(sum(n, Classification::functional, 90));
        auto cfg = CoverageConfig::defaults();
        auto keys = select_key_sections(sums, cfg);
        REQUIRE(keys.size() == 3);
        std::vector<TestCase> suite = {tc("TC-a", {"1"}), tc("TC-b", {"2"})};
        auto breadth = compute_breadth(suite, keys);
        CHECK(breadth.uncovered == std::vector<std::string>{"3"});

        std::vector<std::string> tasks;
        llm::Gateway gw(std::make_shared<llm::CallbackBackend>([&](const std::string& p) -> std::string {
            auto task = test::task_of(p);
            auto sec = section_attr(p);
            tasks.push_back(task + ":" + sec);
            if (task == "depth_judge")
                return (sec == "2" && p.find("TC-D1") == std::string::npos ? depth_json(60, 40) : depth_json(95, 85)).dump();
            return Json{{"cases", {case_json("New for " + sec, {sec})}}}.dump();
        }));
        auto depth = judge_all(tree, keys, suite, gw);
        CHECK(depth.find("3")->case_count == 0);
        tasks.clear();
        Warnings ws;
        auto res = refine(tree, sums, keys, suite, breadth, depth, cfg, gw, ws);
        CHECK(res.rounds == 1);
        CHECK(tasks == std::vector<std::string>{"supplement_cases:3", "depth_improvement:2", "depth_judge:2", "depth_judge:3"});
        REQUIRE(res.new_cases.size() == 2);
        CHECK(res.new_cases[0].case_id == "TC-S1-3-1");
        CHECK(res.new_cases[0].provenance == "supplement");
        CHECK(res.new_cases[1].case_id == "TC-D1-2-1");
        CHECK(res.new_cases[1].provenance == "depth");
        CHECK(res.final_breadth.coverage_rate == 1.0);
        CHECK(res.breadth_history.size() == 2);
        CHECK(res.breadth_history.front() == doctest::Approx(2.0 / 3.0));
        CHECK(res.boundary_history.back() > res.boundary_history.front());
    }

    TEST_CASE("refinement stops at once when targets are met or rounds are zero")
    {
        auto tree = test::make_tree({"1"});
        analysis::SummarySet sums;
        sums.items.push_back(sum("1", Classification::functional, 90));
        auto cfg = CoverageConfig::defaults();
        auto keys = select_key_sections(sums, cfg);
        std::vector<TestCase> suite = {tc("a", {"1"})};
        DepthReport depth;
        depth.entries.push_back({"1", 95, 85, "", {}, 1});
        auto backend = std::make_shared<test::ScriptedBackend>();
        llm::Gateway gw(backend);
        Warnings ws;
        auto res = refine(tree, sums, keys, suite, compute_breadth(suite, keys), depth, cfg, gw, ws);
        CHECK(res.rounds == 0);
        CHECK(backend->prompts.empty());
        CHECK(res.breadth_history.size() == 1);

        depth.entries[0].boundary_case_score = 10;
        cfg.max_refinement_rounds = 0;
        res = refine(tree, sums, keys, suite, compute_breadth(suite, keys), depth, cfg, gw, ws);
        CHECK(res.rounds == 0);
        CHECK(backend->prompts.empty());
    }

    TEST_CASE("regeneration keeps identity and sections")
    {
        auto tree = test::make_tree({"1", "2"});
        auto orig = tc("TC-fsm-0002", {"1", "2"});
        orig.point_id = "fsm-0002";
        auto backend = std::make_shared<test::ScriptedBackend>(std::vector<std::string>{case_json("Rewritten", {"2"}).dump()});
        llm::Gateway gw(backend);
        Warnings ws;
        auto c = regenerate_case(orig, "config rejected", tree, gw, ws);
        CHECK(c.case_id == "TC-fsm-0002-regen");
        CHECK(c.provenance == "regeneration");
        CHECK(c.point_id == "fsm-0002");
        CHECK(c.reference_sections == std::vector<std::string>{"1", "2"});
        CHECK(backend->prompts[0].find("config rejected") != std::string::npos);
        CHECK(backend->prompts[0].find("Body of section 2.") != std::string::npos);
    }

    TEST_CASE("case and report serialization")
    {
        test::TempDir tmp;
        auto a = tc("a", {"1"});
        a.parameters = {{"variant", "boundary"}};
        write_cases(tmp / "c.jsonl", {a, tc("b", {"2"})});
        auto back = read_cases(tmp / "c.jsonl");
        REQUIRE(back.size() == 2);
        CHECK(back[0].to_json() == a.to_json());
        BreadthReport b;
        b.key_sections = {{"1", 80.0}};
        b.covered = {"1"};
        b.coverage_rate = 1.0;
        CHECK(BreadthReport::from_json(b.to_json()).to_json() == b.to_json());
        DepthReport d;
        d.entries.push_back({"1", 90, 70, "why", {"s"}, 2});
        d.entries.push_back({"2", 70, 90, "why", {}, 1});
        CHECK(d.mean_basic() == 80.0);
        CHECK(d.mean_boundary() == 80.0);
        CHECK(DepthReport::from_json(d.to_json()).to_json() == d.to_json());
    }
}
