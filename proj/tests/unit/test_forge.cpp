#include "conformgen/artifact_forge.hpp"
#include "conformgen/text.hpp"
#include "support.hpp"

#include "doctest.h"

#include <functional>
#include <map>
#include <random>
#include <set>

using namespace conformgen;
using namespace conformgen::forge;
using faults::FaultCategory;

namespace {

faults::FaultReport fault(FaultCategory c, const std::string& signature, const std::string& evidence = "line 1: x")
{
    faults::FaultReport r;
    r.category = c;
    r.signature = signature;
    r.evidence = evidence;
    return r;
}

struct OracleLeaf {
    std::string id;
    double score;
};

double oracle_overlap(const std::set<std::string>& q, const std::string& summary)
{
    if (q.empty())
        return 0.0;
    auto toks = text::tokens(summary);
    std::set<std::string> t(toks.begin(), toks.end());
    double n = 0;
    for (const auto& w : q)
        n += t.count(w);
    return n / static_cast<double>(q.size());
}

void oracle_walk(const SummaryIndexNode& n, const std::set<std::string>& q, double anc, std::vector<OracleLeaf>& out)
{
    double own = oracle_overlap(q, n.summary);
    if (n.children.empty()) {
        out.push_back({n.entry_id, own + 0.5 * anc});
        return;
    }
    for (const auto& c : n.children)
        oracle_walk(c, q, std::max(anc, own), out);
}

SummaryIndexNode random_index(std::mt19937& rng, const std::vector<std::string>& vocab, std::map<std::string, std::string>& payloads)
{
    int next = 0;
    std::function<SummaryIndexNode(int)> make = [&](int depth) {
        SummaryIndexNode n;
        n.entry_id = "n" + std::to_string(next++);
        std::vector<std::string> words;
        for (std::size_t i = 0, m = rng() % 5; i < m; ++i)
            words.push_back(vocab[rng() % vocab.size()]);
        n.summary = text::join(words, " ");
        std::size_t kids = depth >= 3 ? 0 : rng() % 4;
        for (std::size_t i = 0; i < kids; ++i)
            n.children.push_back(make(depth + 1));
        if (n.children.empty()) {
            n.payload_ref = "p" + n.entry_id;
            payloads[*n.payload_ref] = "payload of " + n.entry_id;
        }
        return n;
    };
    SummaryIndexNode root;
    root.entry_id = "root";
    for (std::size_t i = 0, m = 1 + rng() % 4; i < m; ++i)
        root.children.push_back(make(1));
    return root;
}

cases::TestCase simple_case()
{
    cases::TestCase tc;
    tc.case_id = "TC-1";
    tc.title = "RIP enable";
    tc.objective = "Enable RIP";
    tc.steps = {"Configure RIP on the DUT"};
    tc.expected_results = {"RIP runs"};
    tc.reference_sections = {"1"};
    return tc;
}

} // namespace

TEST_SUITE("forge")
{
    TEST_CASE("experience pool records, bumps and matches by category")
    {
        ExperiencePool pool;
        CHECK(pool.record("Unknown command: router RIP 2", FaultCategory::syntax_error, "fix A", "t"));
        CHECK_FALSE(pool.record("unknown command: router rip 7", FaultCategory::syntax_error, "fix B", "t"));
        REQUIRE(pool.size() == 1);
        CHECK(pool.entries()[0].error_signature == "unknown command: router rip <n>");
        CHECK(pool.entries()[0].hit_count == 1);
        CHECK(pool.entries()[0].resolution == "fix A");
        auto m = pool.best_match("unknown command: router rip 3", FaultCategory::syntax_error, 0.8);
        REQUIRE(m);
        CHECK(m->similarity == 1.0);
        CHECK_FALSE(pool.best_match("unknown command: router rip 3", FaultCategory::environment, 0.0));
        CHECK_FALSE(pool.best_match("totally different words", FaultCategory::syntax_error, 0.8));
        CHECK(ExperiencePool::from_json(pool.to_json()).to_json() == pool.to_json());
        auto dup = pool.to_json();
        dup["entries"].push_back(dup["entries"][0]);
        CHECK_THROWS_AS(ExperiencePool::from_json(dup), Error);
    }

    TEST_CASE("ties go to the entry with more hits")
    {
        ExperiencePool pool;
        pool.record("a b c x", FaultCategory::syntax_error, "first", "t");
        pool.record("a b c y", FaultCategory::syntax_error, "second", "t");
        pool.at(1).hit_count = 5;
        auto m = pool.best_match("a b c z", FaultCategory::syntax_error, 0.5);
        REQUIRE(m);
        CHECK(m->index == 1);
        CHECK(m->similarity == 0.75);
    }

    TEST_CASE("correction uses the pool, else the category template")
    {
        ExperiencePool pool;
        pool.record("unknown command: ip rip", FaultCategory::syntax_error, "Use router rip.", "t");
        auto templates = FixTemplates::defaults();
        auto c = correct(fault(FaultCategory::syntax_error, "unknown command: ip rip"), pool, templates);
        CHECK(c.fix == "Use router rip.");
        CHECK(c.matched_entry == 0);
        CHECK(pool.entries()[0].hit_count == 1);
        auto g = correct(fault(FaultCategory::environment, "link down", "line 4: link down"), pool, templates);
        CHECK_FALSE(g.matched_entry.has_value());
        CHECK(g.fix == templates.by_category.at(FaultCategory::environment) + " Evidence: line 4: link down");
        CHECK(templates.by_category.size() == 5);
    }

    TEST_CASE("retrieval ranking agrees with an independent walk")
    {
        std::mt19937 rng(29);
        const std::vector<std::string> vocab = {"ospf", "rip", "bgp", "port", "route", "the", "of", "timer", "area", "peer"};
        for (int trial = 0; trial < 300; ++trial) {
            std::map<std::string, std::string> payloads;
            auto index = random_index(rng, vocab, payloads);
            std::vector<std::string> qw;
            for (std::size_t i = 0, m = rng() % 4; i < m; ++i)
                qw.push_back(vocab[rng() % vocab.size()]);
            auto query = text::join(qw, " ");
            std::size_t k = 1 + rng() % 4;

            static const std::set<std::string> stop = {"the", "of"};
            std::set<std::string> q;
            for (const auto& w : qw)
                if (!stop.count(w))
                    q.insert(w);
            std::vector<OracleLeaf> leaves;
            for (const auto& c : index.children)
                oracle_walk(c, q, 0.0, leaves);
            std::stable_sort(leaves.begin(), leaves.end(), [](const OracleLeaf& a, const OracleLeaf& b) { return a.score > b.score; });
            std::vector<std::string> expect;
            for (const auto& l : leaves)
                if (l.score > 0 && expect.size() < k)
                    expect.push_back(l.id);

            auto got = retrieve(index, payloads, query, k);
            std::vector<std::string> ids;
            for (const auto& e : got)
                ids.push_back(e.entry_id);
            if (expect.empty()) {
                REQUIRE_FALSE(got.empty());
                CHECK(got.size() == std::min(k, index.children.size()));
                for (std::size_t i = 0; i < got.size(); ++i) {
                    CHECK(got[i].low_confidence);
                    CHECK(got[i].entry_id == index.children[i].entry_id);
                }
            } else {
                CHECK(ids == expect);
                for (const auto& e : got) {
                    CHECK_FALSE(e.low_confidence);
                    CHECK(e.payload == "payload of " + e.entry_id);
                    CHECK(e.path.front() == "root");
                    CHECK(e.path.back() == e.entry_id);
                }
            }
        }
    }

    TEST_CASE("index validation")
    {
        SummaryIndexNode empty;
        empty.entry_id = "root";
        CHECK_THROWS_AS(retrieve(empty, {}, "x", 3), Error);
        CHECK_THROWS_AS(SummaryIndexNode::from_json(Json::parse(R"({"entry_id":"r","children":[{"entry_id":"a"}]})")), Error);
        CHECK_THROWS_AS(SummaryIndexNode::from_json(Json::parse(
                            R"({"entry_id":"r","children":[{"entry_id":"a","payload_ref":"x"},{"entry_id":"a","payload_ref":"y"}]})")),
                        Error);
    }

    TEST_CASE("shipped knowledge base validates and retrieves")
    {
        auto kb = KnowledgeBase::defaults();
        kb.validate();
        auto profile = testbed::TestbedProfile::defaults();
        kb.validate(&profile);
        auto hits = retrieve(kb.index, kb.payloads, "configure rip network passive interface", 2);
        REQUIRE_FALSE(hits.empty());
        CHECK(hits.front().entry_id == "dut-cli/routing/rip");
        testbed::TestbedProfile other;
        other.devices.push_back({"r9", "dut", {"eth0"}});
        CHECK_THROWS_AS(kb.validate(&other), Error);
    }

    TEST_CASE("knowledge base save and load")
    {
        test::TempDir tmp;
        auto kb = KnowledgeBase::defaults();
        kb.pool.record("new sig", FaultCategory::environment, "wait", "t");
        kb.save(tmp.path());
        auto back = KnowledgeBase::load(tmp.path());
        CHECK(back.pool.to_json() == kb.pool.to_json());
        CHECK(back.index.to_json() == kb.index.to_json());
        CHECK(back.payloads == kb.payloads);
        CHECK(back.few_shots.size() == kb.few_shots.size());
        std::filesystem::remove(tmp / "sops.json");
        CHECK_THROWS_AS(KnowledgeBase::load(tmp.path()), Error);
    }

    TEST_CASE("few-shot selection uses Laplace pass rates")
    {
        std::vector<FewShotExample> pool(5);
        int uses[] = {0, 4, 10, 2, 4};
        int passes[] = {0, 4, 8, 0, 4};
        for (int i = 0; i < 5; ++i) {
            pool[i].example_id = "e" + std::to_string(i);
            pool[i].uses = uses[i];
            pool[i].passes = passes[i];
        }
        CHECK(pool[0].score() == 0.5);
        CHECK(pool[1].score() == doctest::Approx(5.0 / 6.0));
        CHECK(pool[2].score() == 0.75);
        auto top = select_few_shots(pool, 3);
        REQUIRE(top.size() == 3);
        CHECK(top[0]->example_id == "e1");
        CHECK(top[1]->example_id == "e4");
        CHECK(top[2]->example_id == "e2");
        CHECK(select_few_shots(pool, 10).size() == 5);
    }

    TEST_CASE("orchestration needs steps and at least one intent")
    {
        auto tc = simple_case();
        auto backend = std::make_shared<test::ScriptedBackend>(std::vector<std::string>{
            R"({"script_intents":[],"config_intents":[],"topology_intents":[]})",
            R"({"script_intents":["assert rip"],"config_intents":["enable rip"],"topology_intents":[]})"});
        llm::Gateway gw(backend);
        auto i = orchestrate(tc, {}, gw);
        CHECK(i.config_intents == std::vector<std::string>{"enable rip"});
        CHECK(backend->prompts.size() == 2);
        CHECK(backend->prompts[1].find("at least one intent list") != std::string::npos);
        tc.steps.clear();
        CHECK_THROWS_AS(orchestrate(tc, {}, gw), Error);
    }

    TEST_CASE("drafting splits multi-line entries and carries feedback")
    {
        auto kb = KnowledgeBase::defaults();
        auto backend = std::make_shared<test::ScriptedBackend>(std::vector<std::string>{
            R"({"tester_script":["call wait 1\nassert called wait  "],"dut_config":["router rip\n network 10.0.0.0/8"]})",
            R"({"tester_script":["assert called wait"],"dut_config":[]})"});
        llm::Gateway gw(backend);
        ArtifactAgent agent(kb, gw);
        FineGrainedIntent intents;
        intents.config_intents = {"configure rip network"};
        auto d = agent.draft(simple_case(), intents, nullptr);
        CHECK(d.artifact.case_id == "TC-1");
        CHECK(d.artifact.tester_script == std::vector<std::string>{"call wait 1", "assert called wait"});
        CHECK(d.artifact.dut_config == std::vector<std::string>{"router rip", " network 10.0.0.0/8"});
        CHECK(backend->prompts[0].find("(first draft)") != std::string::npos);
        CHECK(backend->prompts[0].find("[dut-cli/routing/rip]") != std::string::npos);

        RoundFeedback fb;
        fb.round = 1;
        fb.previous = d.artifact;
        fb.faults = {fault(FaultCategory::syntax_error, "sig", "line 2: network: bad")};
        fb.fixes = {Correction{"Rewrite it.", std::nullopt, "", 0.0}};
        agent.draft(simple_case(), intents, &fb);
        const auto& p = backend->prompts[1];
        CHECK(p.find("[syntax_error] line 2: network: bad") != std::string::npos);
        CHECK(p.find("candidate fix: Rewrite it.") != std::string::npos);
        CHECK(p.find("(first draft)") == std::string::npos);
    }

    TEST_CASE("sub-agent updates after a two-round pass")
    {
        auto kb = KnowledgeBase::defaults();
        auto before_pool = kb.pool.size();
        auto before_shots = kb.few_shots;
        REQUIRE_FALSE(before_shots.empty());
        RunOutcome out;
        out.test_case = simple_case();
        out.passed = true;
        out.intents.config_intents = {"enable rip"};
        out.few_shot_ids = {before_shots[0].example_id};
        RoundRecord r1;
        r1.attempt = 1;
        r1.round = 1;
        r1.artifact.dut_config = {"ip rip enable"};
        r1.artifact.tester_script = {"assert config_has \"router rip\""};
        r1.faults = {fault(FaultCategory::syntax_error, "unknown command: ip rip enable")};
        r1.fixes = {"generic"};
        RoundRecord r2 = r1;
        r2.round = 2;
        r2.artifact.dut_config = {"router rip"};
        r2.faults.clear();
        out.rounds = {r1, r2};
        ForgeOptions opts;
        opts.run_id = "unit";
        auto s = update_subagents(kb, out, opts);
        CHECK(s.pool_added == 1);
        CHECK(kb.pool.size() == before_pool + 1);
        const auto& e = kb.pool.entries().back();
        CHECK(e.resolution == "Replace 'ip rip enable' with 'router rip'.");
        CHECK(e.provenance == "unit/TC-1");
        CHECK(kb.few_shots[0].uses == before_shots[0].uses + 1);
        CHECK(kb.few_shots[0].passes == before_shots[0].passes + 1);
        CHECK(kb.few_shots.back().example_id == "case:TC-1");
        CHECK(s.few_shots_changed == 2);

        // A second identical outcome bumps instead of adding.
        auto again = update_subagents(kb, out, opts);
        CHECK(again.pool_added == 0);
        CHECK(again.pool_bumped == 1);
    }

    TEST_CASE("single-round and failing outcomes leave the pool alone")
    {
        auto kb = KnowledgeBase::defaults();
        auto n = kb.pool.size();
        RunOutcome out;
        out.test_case = simple_case();
        out.passed = true;
        out.rounds.resize(1);
        update_subagents(kb, out);
        CHECK(kb.pool.size() == n);
        RoundRecord a;
        a.attempt = 1;
        a.faults = {fault(FaultCategory::syntax_error, "x")};
        out.passed = false;
        out.rounds = {a, a};
        update_subagents(kb, out);
        CHECK(kb.pool.size() == n);
    }

    TEST_CASE("few-shot pool respects its cap")
    {
        auto kb = KnowledgeBase::defaults();
        ForgeOptions opts;
        opts.few_shot_cap = kb.few_shots.size();
        RunOutcome out;
        out.test_case = simple_case();
        out.passed = true;
        out.intents.script_intents = {"x"};
        for (int i = 0; i < 4; ++i) {
            out.test_case.case_id = "TC-" + std::to_string(i);
            update_subagents(kb, out, opts);
            CHECK(kb.few_shots.size() == opts.few_shot_cap);
        }
    }

    TEST_CASE("forge options")
    {
        auto o = ForgeOptions::from_json(Json::parse(R"({"retrieval_k":5,"similarity_cutoff":0.6})"));
        CHECK(o.retrieval_k == 5);
        CHECK(o.few_shot_count == 3);
        CHECK(ForgeOptions::from_json(o.to_json()).to_json() == o.to_json());
        CHECK_THROWS_AS(ForgeOptions::from_json(Json{{"similarity_cutoff", 1.5}}), Error);
    }
}
