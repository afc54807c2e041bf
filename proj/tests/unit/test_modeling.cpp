#include "conformgen/low_level_modeling.hpp"
#include "conformgen/text.hpp"
#include "fixture_responder.hpp"
#include "support.hpp"

#include "doctest.h"

#include <numeric>
#include <random>

using namespace conformgen;
using namespace conformgen::modeling;
using analysis::AgentKind;
using analysis::ProtocolModule;

namespace {

ingest::SpecTree titled_tree(const std::vector<std::pair<std::string, std::string>>& secs)
{
    ingest::SpecMetadata md;
    md.title = "Titled";
    std::vector<ingest::SectionNode> nodes;
    for (const auto& [n, t] : secs) {
        ingest::SectionNode node;
        node.number = n;
        node.title = t;
        node.content = "Body " + n;
        nodes.push_back(node);
    }
    return ingest::SpecTree::assemble(md, nodes);
}

ProtocolModule module_of(const std::string& name, AgentKind agent, std::vector<std::string> secs)
{
    ProtocolModule m;
    m.module_name = name;
    m.assigned_agent = agent;
    m.section_numbers = std::move(secs);
    return m;
}

MessageStep step(const std::string& id, std::vector<std::string> after = {})
{
    MessageStep s;
    s.step_id = id;
    s.message_type = "M" + id;
    s.ordering_constraints = std::move(after);
    return s;
}

/// Smallest-index-first topological order by repeated scanning.
std::optional<std::vector<std::size_t>> scan_order(const std::vector<std::vector<std::size_t>>& preds)
{
    std::size_t n = preds.size();
    std::vector<bool> placed(n, false);
    std::vector<std::size_t> out;
    while (out.size() < n) {
        bool progressed = false;
        for (std::size_t i = 0; i < n && !progressed; ++i) {
            if (placed[i])
                continue;
            bool ok = true;
            for (auto p : preds[i])
                ok = ok && (placed[p] || p == i);
            if (ok) {
                placed[i] = true;
                out.push_back(i);
                progressed = true;
            }
        }
        if (!progressed)
            return std::nullopt;
    }
    return out;
}

} // namespace

TEST_SUITE("modeling")
{
    TEST_CASE("header sections are visited first")
    {
        auto tree = titled_tree({{"1", "Overview"}, {"2", "Packet Format"}, {"3", "Processing"}, {"4", "Route TLV Encoding"}});
        auto kw = header_keywords();
        CHECK(reorder_header_first({"3", "1", "4", "2"}, tree, kw) == std::vector<std::string>{"2", "4", "1", "3"});
        CHECK(reorder_header_first({"1", "3"}, tree, kw) == std::vector<std::string>{"1", "3"});
    }

    TEST_CASE("field modeling merges by name across rounds")
    {
        auto tree = titled_tree({{"1", "Processing"}, {"2", "Header Format"}, {"3", "Unused"}});
        std::vector<std::string> order;
        llm::Gateway gw(std::make_shared<llm::CallbackBackend>([&](const std::string& p) {
            static const std::regex re(R"(<current_section number="([^"]+)\")");
            std::smatch m;
            std::regex_search(p, m, re);
            order.push_back(m[1]);
            if (m[1] == "2")
                return R"({"fields":[{"field_name":"Command","offset_bits":0,"width_bits":8},
                                     {"field_name":"Version","offset_bits":8,"width_bits":8,"value_constraints":"must be 1"}]})";
            if (m[1] == "1")
                return R"({"fields":[{"field_name":"version","value_constraints":"drop otherwise","expected_response":"discard"}]})";
            return R"({"fields":[]})";
        }));
        auto m = model_fields(module_of("Hdr", AgentKind::packet_field, {"1", "2", "3"}), tree, gw);
        CHECK(order == std::vector<std::string>{"2", "1", "3"});
        REQUIRE(m.packet);
        REQUIRE(m.packet->fields.size() == 2);
        const auto& v = m.packet->fields[1];
        CHECK(v.field_name == "Version");
        CHECK(v.offset_bits == 8);
        CHECK(v.value_constraints == "must be 1; drop otherwise");
        CHECK(v.expected_response == "discard");
        CHECK(v.source_sections == std::vector<std::string>{"1", "2"});
        CHECK(m.uncovered_sections == std::vector<std::string>{"3"});
        CHECK_FALSE(m.packet->flagged_empty);
    }

    TEST_CASE("empty field model is flagged")
    {
        auto tree = titled_tree({{"1", "Header"}});
        llm::Gateway gw(std::make_shared<llm::CallbackBackend>([](const std::string&) { return R"({"fields":[]})"; }));
        auto m = model_fields(module_of("H", AgentKind::packet_field, {"1"}), tree, gw);
        CHECK(m.packet->flagged_empty);
        CHECK(std::any_of(m.warnings.begin(), m.warnings.end(), [](const Warning& w) { return w.code == "empty_model"; }));
    }

    TEST_CASE("agent mismatch is a precondition violation")
    {
        auto tree = titled_tree({{"1", "Header"}});
        llm::Gateway gw(std::make_shared<test::ScriptedBackend>());
        try {
            model_fsm(module_of("H", AgentKind::packet_field, {"1"}), tree, gw);
            FAIL("expected PreconditionViolation");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::PreconditionViolation);
        }
    }

    TEST_CASE("transition integration dedupes on source, event and target")
    {
        FsmModel m;
        FsmTransition a{"Down", "Init", "Hello", "", {"c1"}, {"2"}};
        FsmTransition b{"Down", "Init", "Hello", "start timer", {"c2", "c1"}, {"1"}};
        FsmTransition c{"Down", "Full", "Hello", "", {}, {"3"}};
        integrate_transitions(m, {a});
        integrate_transitions(m, {b, c});
        REQUIRE(m.transitions.size() == 2);
        CHECK(m.transitions[0].constraints == std::vector<std::string>{"c1", "c2"});
        CHECK(m.transitions[0].source_sections == std::vector<std::string>{"1", "2"});
        CHECK(m.transitions[0].action == "start timer");
    }

    TEST_CASE("dangling states are inferred or rejected")
    {
        FsmModel m;
        m.states.push_back({"Down", "", false});
        m.transitions.push_back({"Down", "Up", "Hello", "", {}, {}});
        m.transitions.push_back({"Down", "Init", "Hello", "", {}, {}});
        auto strict = m;
        Warnings ws;
        resolve_dangling(m, false, ws);
        CHECK(m.has_state("Up"));
        CHECK(m.states.back().inferred);
        auto codes = std::count_if(ws.begin(), ws.end(), [](const Warning& w) { return w.code == "inferred_state"; });
        CHECK(codes == 2);
        CHECK(std::any_of(ws.begin(), ws.end(), [](const Warning& w) { return w.code == "nondeterministic_transition"; }));
        try {
            resolve_dangling(strict, true, ws);
            FAIL("expected DanglingState");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::DanglingState);
            CHECK(e.subject() == "Up");
        }
    }

    TEST_CASE("fsm modeling runs framework, then extract and refine per section")
    {
        auto tree = titled_tree({{"1", "States"}, {"2", "Events"}});
        std::vector<std::string> tasks;
        llm::Gateway gw(std::make_shared<llm::CallbackBackend>([&](const std::string& p) {
            auto task = test::task_of(p);
            tasks.push_back(task);
            if (task == "fsm_framework")
                return R"({"states":[{"name":"Down"},{"name":"Up"}],"transitions":[]})";
            if (task == "fsm_section")
                return R"({"states":[],"transitions":[{"source":"Down","target":"Wrong","event":"Hello"}]})";
            if (p.find("number=\"1\"") != std::string::npos)
                return R"({"states":[],"transitions":[{"source":"Down","target":"Up","event":"Hello","source_sections":["9.9"]}]})";
            return R"({"states":[],"transitions":[]})";
        }));
        auto m = model_fsm(module_of("F", AgentKind::fsm, {"1", "2"}), tree, gw);
        CHECK(tasks == std::vector<std::string>{"fsm_framework", "fsm_section", "fsm_refine", "fsm_section", "fsm_refine"});
        REQUIRE(m.fsm);
        REQUIRE(m.fsm->transitions.size() == 1);
        CHECK(m.fsm->transitions[0].target == "Up");
        CHECK(m.fsm->transitions[0].source_sections == std::vector<std::string>{"1"});
        CHECK(m.uncovered_sections == std::vector<std::string>{"2"});
        CHECK(std::any_of(m.warnings.begin(), m.warnings.end(), [](const Warning& w) { return w.code == "unresolved_section"; }));
    }

    TEST_CASE("step ordering matches a scanning oracle on random graphs")
    {
        std::mt19937 rng(7);
        int cyclic = 0;
        for (int trial = 0; trial < 300; ++trial) {
            std::size_t n = 1 + rng() % 9;
            std::vector<std::vector<std::size_t>> preds(n);
            std::vector<MessageStep> steps;
            bool allow_back = trial % 3 == 0;
            for (std::size_t i = 0; i < n; ++i) {
                std::vector<std::string> after;
                for (std::size_t j = 0; j < n; ++j) {
                    if (j == i || rng() % 4 != 0)
                        continue;
                    if (j > i && !allow_back)
                        continue;
                    preds[i].push_back(j);
                    after.push_back("s" + std::to_string(j));
                }
                steps.push_back(step("s" + std::to_string(i), after));
            }
            // Shuffle presentation so index order and id order differ.
            std::vector<std::size_t> perm(n);
            std::iota(perm.begin(), perm.end(), 0);
            std::shuffle(perm.begin(), perm.end(), rng);
            std::vector<MessageStep> shown;
            std::vector<std::vector<std::size_t>> shown_preds(n);
            std::vector<std::size_t> where(n);
            for (std::size_t k = 0; k < n; ++k)
                where[perm[k]] = k;
            for (std::size_t k = 0; k < n; ++k) {
                shown.push_back(steps[perm[k]]);
                for (auto p : preds[perm[k]])
                    shown_preds[k].push_back(where[p]);
            }
            auto expect = scan_order(shown_preds);
            Warnings ws;
            if (!expect) {
                ++cyclic;
                CHECK_THROWS(order_steps(shown, ws));
                continue;
            }
            auto got = order_steps(shown, ws);
            REQUIRE(got.size() == n);
            for (std::size_t k = 0; k < n; ++k)
                CHECK(got[k].step_id == shown[(*expect)[k]].step_id);
        }
        CHECK(cyclic > 0);
    }

    TEST_CASE("unknown step references warn and cycles name the stuck steps")
    {
        Warnings ws;
        auto out = order_steps({step("a", {"ghost"}), step("b", {"a"})}, ws);
        CHECK(out.size() == 2);
        CHECK(ws.size() == 1);
        try {
            order_steps({step("a", {"b"}), step("b", {"a"}), step("c")}, ws);
            FAIL("expected CyclicOrdering");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::CyclicOrdering);
            CHECK(e.subject() == "a,b");
        }
    }

    TEST_CASE("protocol-specific prompts carry one body and the other summaries")
    {
        auto tree = titled_tree({{"1", "Auth"}, {"2", "Keys"}});
        analysis::SummarySet sums;
        analysis::SectionSummary s1;
        s1.section_number = "1";
        s1.summary = "Auth summary.";
        sums.items.push_back(s1);
        std::vector<std::string> prompts;
        llm::Gateway gw(std::make_shared<llm::CallbackBackend>([&](const std::string& p) {
            prompts.push_back(p);
            return R"({"points":[{"title":"T","objective":"O","reference_sections":["2","nope"],
                                  "additional_tools_required":["python","crystal_ball"]}]})";
        }));
        auto m = model_protocol_specific(module_of("P", AgentKind::protocol_specific, {"1", "2"}), tree, sums,
                                         Toolkit::defaults(), gw);
        REQUIRE(prompts.size() == 2);
        CHECK(prompts[1].find("Auth summary.") != std::string::npos);
        CHECK(prompts[0].find("(no summary)") != std::string::npos);
        CHECK(prompts[0].find("Body 2") == std::string::npos);
        REQUIRE(m.specific_points.size() == 2);
        CHECK(m.specific_points[0].reference_sections == std::vector<std::string>{"1", "2"});
        auto unknown = std::count_if(m.warnings.begin(), m.warnings.end(), [](const Warning& w) { return w.code == "unknown_tool"; });
        CHECK(unknown == 2);
    }

    TEST_CASE("toolkit handlers")
    {
        Toolkit tk({{"echo", "Echoes.", "text", "text"}});
        CHECK_FALSE(tk.invoke("echo", "x").has_value());
        tk.set_handler("echo", [](const std::string& in) { return std::optional<std::string>(in + in); });
        CHECK(tk.invoke("echo", "x") == "xx");
        CHECK_THROWS_AS(tk.set_handler("nope", nullptr), Error);
        CHECK_THROWS_AS(Toolkit({{"a", "", "", ""}, {"a", "", "", ""}}), Error);
        CHECK(Toolkit().describe() == "(no tools)");
    }

    TEST_CASE("point enumeration counts one point per element")
    {
        ModuleModel a;
        a.module_name = "A";
        a.packet = PacketModel{};
        a.packet->fields.push_back(FieldSpec{"F2", 0, 8, "", "", "", {"3"}});
        a.packet->fields.push_back(FieldSpec{"F1", 8, 8, "", "", "", {"2"}});
        ModuleModel b;
        b.module_name = "B";
        b.fsm = FsmModel{};
        b.fsm->transitions.push_back({"X", "Y", "e", "", {}, {"5"}});
        b.fsm->transitions.push_back({"X", "Z", "f", "", {}, {"4"}});
        b.fsm->transitions.push_back({"Y", "Z", "g", "", {}, {"4"}});
        b.sequence = SequenceModel{{step("s1")}};
        TestingPoint sp;
        sp.title = "special";
        sp.reference_sections = {"1"};
        b.specific_points.push_back(sp);
        auto pts = enumerate_points({a, b});
        REQUIRE(pts.size() == 7);
        std::vector<std::string> ids;
        for (const auto& p : pts)
            ids.push_back(p.point_id);
        CHECK(ids == std::vector<std::string>{"field-0001", "field-0002", "fsm-0001", "fsm-0002", "fsm-0003",
                                              "time_sequence-0001", "protocol_specific-0001"});
        CHECK(pts[0].parameters.at("field_name") == "F1");
        CHECK(pts[2].parameters.at("target_state") == "Z");
        CHECK(pts[3].parameters.at("source_state") == "Y");
        CHECK(pts[6].module_name == "B");
    }

    TEST_CASE("mini RFC models round-trip")
    {
        auto tree = ingest::ingest({"mini", io::read_file(test::fixture("mini_rfc/mini_rfc.txt"))});
        llm::Gateway gw(fixture::make_backend());
        auto sums = analysis::summarize_sections(tree, gw);
        auto catalog = analysis::AgentCatalog::defaults();
        auto mods = analysis::complete_modules(tree, sums, analysis::form_modules(tree, sums, catalog, gw), catalog, gw);
        std::vector<ModuleModel> models;
        for (const auto& m : mods.modules)
            models.push_back(model_module(m, tree, sums, Toolkit::defaults(), gw));
        REQUIRE(models.size() == mods.modules.size());
        for (const auto& m : models)
            CHECK(ModuleModel::from_json(m.to_json()).to_json() == m.to_json());
        auto pts = enumerate_points(models);
        CHECK_FALSE(pts.empty());
        for (const auto& p : pts) {
            CHECK(TestingPoint::from_json(p.to_json()).to_json() == p.to_json());
            CHECK_FALSE(p.reference_sections.empty());
        }
    }
}
