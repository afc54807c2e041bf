#include "conformgen/high_level_analysis.hpp"
#include "conformgen/text.hpp"
#include "fixture_responder.hpp"
#include "support.hpp"

#include "doctest.h"

using namespace conformgen;
using namespace conformgen::analysis;

namespace {

Json summary(const std::string& cls, int importance, std::vector<std::string> refs = {})
{
    return {{"summary", "A summary."}, {"references", refs}, {"classification", cls}, {"test_importance", importance}};
}

Json modules(const std::vector<std::tuple<std::string, std::string, std::vector<std::string>>>& ms)
{
    Json arr = Json::array();
    for (const auto& [name, agent, secs] : ms)
        arr.push_back({{"module_name", name}, {"assigned_agent", agent}, {"section_numbers", secs}});
    return {{"modules", arr}};
}

SummarySet functional_summaries(const ingest::SpecTree& tree)
{
    SummarySet s;
    for (const auto& n : tree.section_numbers()) {
        SectionSummary x;
        x.section_number = n;
        x.classification = Classification::functional;
        x.test_importance = 60;
        s.items.push_back(x);
    }
    return s;
}

} // namespace

TEST_SUITE("analysis")
{
    TEST_CASE("importance labels")
    {
        CHECK(importance_label(100) == "high");
        CHECK(importance_label(67) == "high");
        CHECK(importance_label(66) == "medium");
        CHECK(importance_label(34) == "medium");
        CHECK(importance_label(33) == "low");
        CHECK(importance_label(0) == "low");
    }

    TEST_CASE("summaries run in pre-order and carry earlier summaries")
    {
        auto tree = test::make_tree({"1", "2", "2.1", "3"});
        std::vector<std::string> prompts;
        llm::Gateway gw(std::make_shared<llm::CallbackBackend>([&](const std::string& p) {
            prompts.push_back(p);
            return summary("functional", 70, {"Section 2.1", "3.", "9.9", "2"}).dump();
        }));
        auto set = summarize_sections(tree, gw);
        REQUIRE(set.items.size() == 4);
        CHECK(prompts.size() == 4);
        CHECK(prompts[0].find("(none)") != std::string::npos);
        CHECK(prompts[3].find("[2.1] ") != std::string::npos);
        CHECK(prompts[3].find("<current_section number=\"3\"") != std::string::npos);
        const auto* s2 = set.find("2");
        REQUIRE(s2);
        // Self references are dropped; unknown numbers are kept and flagged.
        CHECK(std::find(s2->references.begin(), s2->references.end(), "2") == s2->references.end());
        CHECK(std::find(s2->unresolved_references.begin(), s2->unresolved_references.end(), "9.9") !=
              s2->unresolved_references.end());
        CHECK(std::find(s2->references.begin(), s2->references.end(), "3") != s2->references.end());
    }

    TEST_CASE("empty sections get a synthesized summary without a call")
    {
        ingest::SpecMetadata md;
        std::vector<ingest::SectionNode> nodes(3);
        nodes[0].number = "1";
        nodes[0].title = "Overview";
        nodes[1].number = "1.1";
        nodes[1].content = "Routers MUST answer.";
        nodes[2].number = "2";
        nodes[2].content = "More text.";
        auto tree = ingest::SpecTree::assemble(md, nodes);
        int calls = 0;
        llm::Gateway gw(std::make_shared<llm::CallbackBackend>([&](const std::string&) {
            ++calls;
            return summary("functional", 50).dump();
        }));
        auto set = summarize_sections(tree, gw);
        CHECK(calls == 2);
        CHECK(set.find("1")->empty_body);
        CHECK(set.find("1")->test_importance == 0);
        CHECK(set.find("1")->classification == Classification::descriptive);
        CHECK_FALSE(set.find("1.1")->empty_body);
    }

    TEST_CASE("invalid classification is repaired, then rejected with the section as subject")
    {
        auto tree = test::make_tree({"1"});
        auto backend = std::make_shared<test::ScriptedBackend>(
            std::vector<std::string>{summary("normative", 50).dump(), summary("functional", 50).dump()});
        llm::Gateway gw(backend);
        CHECK(summarize_sections(tree, gw).items.front().classification == Classification::functional);

        auto bad = std::make_shared<test::ScriptedBackend>(std::vector<std::string>(4, summary("normative", 50).dump()));
        llm::Gateway gw2(bad);
        try {
            summarize_sections(tree, gw2);
            FAIL("expected SchemaViolation");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::SchemaViolation);
            CHECK(e.subject() == "1");
        }
    }

    TEST_CASE("module parsing resolves, sorts and warns")
    {
        auto tree = test::make_tree({"1", "2", "10", "A"});
        auto catalog = AgentCatalog::defaults();
        Warnings ws;
        auto parsed = parse_modules(modules({{"M", "fsm", {"10", "2.", "7", "Appendix A"}}, {"Empty", "fsm", {"99"}}}),
                                    tree, catalog, ws);
        REQUIRE(parsed.size() == 1);
        CHECK(parsed[0].section_numbers == std::vector<std::string>{"2", "10", "A"});
        CHECK(ws.size() == 3);
        CHECK_THROWS_AS(parse_modules(modules({{"M", "oracle", {"1"}}}), tree, catalog, ws), Error);
    }

    TEST_CASE("merge unions sections of same-named modules")
    {
        ModuleSet set;
        set.modules.push_back({"Core", "", AgentKind::fsm, {"1", "3"}});
        merge_modules(set, {{"Core", "", AgentKind::fsm, {"2", "3"}}, {"New", "", AgentKind::packet_field, {"4"}}});
        REQUIRE(set.modules.size() == 2);
        CHECK(set.modules[0].section_numbers == std::vector<std::string>{"1", "2", "3"});
        CHECK(set.covered_sections() == std::set<std::string>{"1", "2", "3", "4"});
    }

    TEST_CASE("uncovered sections honour the appendix exemption")
    {
        auto tree = test::make_tree({"1", "2", "A"});
        auto sums = functional_summaries(tree);
        sums.items[2].classification = Classification::appendix;
        sums.items[2].test_importance = 0;
        ModuleSet set;
        set.modules.push_back({"Core", "", AgentKind::fsm, {"1"}});
        CHECK(find_uncovered(tree, set, &sums) == std::vector<std::string>{"2"});
        AnalysisOptions o;
        o.exempt_zero_importance_appendix = false;
        CHECK(find_uncovered(tree, set, &sums, o) == std::vector<std::string>{"2", "A"});
        sums.items[2].test_importance = 10;
        CHECK(find_uncovered(tree, set, &sums) == std::vector<std::string>{"2", "A"});
    }

    TEST_CASE("completion prompt lists only the uncovered sections")
    {
        auto tree = test::make_tree({"1", "2", "3"});
        auto sums = functional_summaries(tree);
        std::vector<std::string> prompts;
        llm::Gateway gw(std::make_shared<llm::CallbackBackend>([&](const std::string& p) {
            prompts.push_back(p);
            if (test::task_of(p) == "module_formation")
                return modules({{"Core", "fsm", {"1"}}}).dump();
            return modules({{"Core", "fsm", {"2"}}, {"Other", "time_sequence", {"3"}}}).dump();
        }));
        auto catalog = AgentCatalog::defaults();
        auto set = complete_modules(tree, sums, form_modules(tree, sums, catalog, gw), catalog, gw);
        REQUIRE(prompts.size() == 2);
        CHECK(prompts[1].find("- section 2 |") != std::string::npos);
        CHECK(prompts[1].find("- section 1 |") == std::string::npos);
        CHECK(set.iteration_count == 1);
        CHECK(set.uncovered_history == std::vector<std::size_t>{2, 0});
        CHECK(set.find("Core")->section_numbers == std::vector<std::string>{"1", "2"});
        CHECK(set.find("Other")->assigned_agent == AgentKind::time_sequence);
    }

    TEST_CASE("full formation needs no completion round")
    {
        auto tree = test::make_tree({"1", "2"});
        auto sums = functional_summaries(tree);
        int calls = 0;
        llm::Gateway gw(std::make_shared<llm::CallbackBackend>([&](const std::string&) {
            ++calls;
            return modules({{"All", "protocol_specific", {"1", "2"}}}).dump();
        }));
        auto catalog = AgentCatalog::defaults();
        auto set = complete_modules(tree, sums, form_modules(tree, sums, catalog, gw), catalog, gw);
        CHECK(calls == 1);
        CHECK(set.iteration_count == 0);
        CHECK(set.uncovered_after.empty());
    }

    TEST_CASE("agent catalog lists the four agents")
    {
        auto c = AgentCatalog::defaults();
        CHECK(c.agents.size() == 4);
        for (auto name : {"packet_field", "fsm", "time_sequence", "protocol_specific"}) {
            REQUIRE(c.find(name));
            CHECK(c.describe().find(name) != std::string::npos);
        }
        CHECK(c.find("oracle") == nullptr);
    }

    TEST_CASE("mini RFC analysis with the fixture responder")
    {
        auto tree = ingest::ingest({"mini", io::read_file(test::fixture("mini_rfc/mini_rfc.txt"))});
        llm::Gateway gw(fixture::make_backend());
        auto sums = summarize_sections(tree, gw);
        CHECK(sums.items.size() == tree.size());
        CHECK(sums.find("6")->classification == Classification::configuration);
        CHECK(sums.find("A")->classification == Classification::appendix);
        auto catalog = AgentCatalog::defaults();
        auto set = complete_modules(tree, sums, form_modules(tree, sums, catalog, gw), catalog, gw);
        CHECK(set.modules.size() == 5);
        CHECK(set.iteration_count == 1);
        CHECK(set.uncovered_after.empty());
        CHECK(set.find("Neighbor State Machine")->assigned_agent == AgentKind::fsm);
        auto back = ModuleSet::from_json(set.to_json());
        CHECK(back.to_json() == set.to_json());
        auto sback = SummarySet::from_json(sums.to_json());
        CHECK(sback.to_json() == sums.to_json());
    }
}
