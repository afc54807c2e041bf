#include "fixture_responder.hpp"

#include "conformgen/text.hpp"

#include <map>
#include <regex>
#include <set>

namespace conformgen::fixture {

namespace {

struct Block {
    std::map<std::string, std::string> attrs;
    std::string body;
};

std::optional<Block> block(const std::string& prompt, const std::string& tag)
{
    auto open = prompt.find("<" + tag);
    if (open == std::string::npos)
        return std::nullopt;
    auto gt = prompt.find('>', open);
    auto close = prompt.find("</" + tag + ">", gt);
    if (gt == std::string::npos || close == std::string::npos)
        return std::nullopt;
    Block b;
    static const std::regex attr_re(R"re((\w+)="([^"]*)")re");
    auto head = prompt.substr(open, gt - open);
    for (std::sregex_iterator it(head.begin(), head.end(), attr_re), end; it != end; ++it)
        b.attrs[(*it)[1].str()] = (*it)[2].str();
    b.body = prompt.substr(gt + 1, close - gt - 1);
    if (!b.body.empty() && b.body.front() == '\n')
        b.body.erase(0, 1);
    if (!b.body.empty() && b.body.back() == '\n')
        b.body.pop_back();
    return b;
}

std::vector<Block> blocks(const std::string& text, const std::string& tag)
{
    std::vector<Block> out;
    std::size_t pos = 0;
    while (true) {
        auto open = text.find("<" + tag + " ", pos);
        if (open == std::string::npos)
            break;
        auto close = text.find("</" + tag + ">", open);
        if (close == std::string::npos)
            break;
        auto slice = text.substr(open, close + tag.size() + 3 - open);
        if (auto b = block(slice, tag))
            out.push_back(*b);
        pos = close + 1;
    }
    return out;
}

std::vector<std::string> paragraphs(const std::string& content)
{
    std::vector<std::string> out, cur;
    for (const auto& l : text::split_lines(content)) {
        if (text::is_blank(l)) {
            if (!cur.empty())
                out.push_back(text::collapse_whitespace(text::join(cur, " ")));
            cur.clear();
        } else {
            cur.push_back(l);
        }
    }
    if (!cur.empty())
        out.push_back(text::collapse_whitespace(text::join(cur, " ")));
    return out;
}

std::vector<std::string> sentences(const std::string& content)
{
    std::vector<std::string> out;
    for (const auto& p : paragraphs(content)) {
        std::size_t start = 0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (p[i] == '.' && (i + 1 == p.size() || p[i + 1] == ' ')) {
                auto s = text::trim_copy(p.substr(start, i + 1 - start));
                if (!s.empty())
                    out.push_back(s);
                start = i + 1;
            }
        }
        auto rest = text::trim_copy(p.substr(std::min(start, p.size())));
        if (!rest.empty())
            out.push_back(rest);
    }
    return out;
}

bool contains_i(const std::string& hay, const std::string& needle)
{
    return text::to_lower(hay).find(needle) != std::string::npos;
}

std::string cap_words(const std::string& s, std::size_t n)
{
    auto w = text::words(s);
    if (w.size() > n)
        w.resize(n);
    auto out = text::join(w, " ");
    while (!out.empty() && (out.back() == '.' || out.back() == ','))
        out.pop_back();
    return out;
}

std::string first_sentence(const std::string& content)
{
    auto s = sentences(content);
    return s.empty() ? std::string("Empty section.") : s.front();
}

// --- analysis ---------------------------------------------------------------

std::string classify_title(const std::string& number, const std::string& title)
{
    if (!number.empty() && std::isalpha(static_cast<unsigned char>(number[0])))
        return "appendix";
    if (contains_i(title, "configuration") || contains_i(title, "parameter"))
        return "configuration";
    if (contains_i(title, "introduction") || contains_i(title, "terminology") || contains_i(title, "overview"))
        return "descriptive";
    return "functional";
}

Json section_summary(const std::string& prompt)
{
    auto sec = block(prompt, "current_section").value_or(Block{});
    auto number = sec.attrs["number"];
    auto cls = classify_title(number, sec.attrs["title"]);
    int importance = 20;
    if (cls == "functional") {
        bool behaviour = sec.body.find("MUST") != std::string::npos || contains_i(sec.body, "state ") ||
                         contains_i(sec.body, "bits at offset") || sec.body.find("Step ") != std::string::npos;
        importance = behaviour ? 80 : 55;
    } else if (cls == "configuration") {
        importance = 70;
    } else if (cls == "appendix") {
        importance = 30;
    }
    std::vector<std::string> refs;
    static const std::regex ref_re(R"(Section\s+(\d+(?:\.\d+)*))");
    auto flat = text::collapse_whitespace(sec.body);
    for (std::sregex_iterator it(flat.begin(), flat.end(), ref_re), end; it != end; ++it) {
        auto r = (*it)[1].str();
        if (r != number && std::find(refs.begin(), refs.end(), r) == refs.end())
            refs.push_back(r);
    }
    return {{"summary", first_sentence(sec.body)},
            {"references", refs},
            {"classification", cls},
            {"test_importance", importance}};
}

struct ModuleSlot {
    std::string name;
    std::string agent;
    std::string description;
};

std::optional<ModuleSlot> slot_for(const std::string& number, const std::string& title, bool allow_config)
{
    if (contains_i(title, "configuration") || contains_i(title, "parameter")) {
        if (!allow_config)
            return std::nullopt;
        return ModuleSlot{"Configuration", "protocol_specific", "Operator configuration of the protocol."};
    }
    (void)number;
    if (contains_i(title, "format"))
        return ModuleSlot{"Message Format", "packet_field", "Header and route entry fields."};
    if (contains_i(title, "state"))
        return ModuleSlot{"Neighbor State Machine", "fsm", "Per-neighbor states, events and timers."};
    if (contains_i(title, "exchange"))
        return ModuleSlot{"Message Exchange", "time_sequence", "Ordering of Request and Response messages."};
    return ModuleSlot{"General Behaviour", "protocol_specific", "Validation and general processing rules."};
}

Json modules_from(const std::string& listing, bool allow_config)
{
    static const std::regex line_re(R"(^- section (\S+) \| title: (.*?) \| test importance:)");
    std::vector<std::string> order;
    std::map<std::string, Json> by_name;
    for (const auto& l : text::split_lines(listing)) {
        std::smatch m;
        if (!std::regex_search(l, m, line_re))
            continue;
        auto slot = slot_for(m[1].str(), m[2].str(), allow_config);
        if (!slot)
            continue;
        if (!by_name.count(slot->name)) {
            order.push_back(slot->name);
            by_name[slot->name] = {{"module_name", slot->name},
                                   {"description", slot->description},
                                   {"assigned_agent", slot->agent},
                                   {"section_numbers", Json::array()}};
        }
        by_name[slot->name]["section_numbers"].push_back(m[1].str());
    }
    Json mods = Json::array();
    for (const auto& n : order)
        mods.push_back(by_name[n]);
    return {{"modules", mods}};
}

// --- modeling ---------------------------------------------------------------

Json fields(const std::string& prompt)
{
    static const std::regex field_re(R"(^([a-z][a-z ]*) \((\d+) bits at offset (\d+)\): (.*)$)");
    auto sec = block(prompt, "current_section").value_or(Block{});
    Json arr = Json::array();
    for (const auto& p : paragraphs(sec.body)) {
        std::smatch m;
        if (!std::regex_match(p, m, field_re))
            continue;
        auto rest = m[4].str();
        std::string constraints = rest, response;
        auto r = rest.find("Receiver:");
        if (r != std::string::npos) {
            constraints = text::trim_copy(rest.substr(0, r));
            response = text::trim_copy(rest.substr(r + 9));
        }
        arr.push_back({{"field_name", m[1].str()},
                       {"offset_bits", std::stoi(m[3].str())},
                       {"width_bits", std::stoi(m[2].str())},
                       {"position", "offset " + m[3].str()},
                       {"value_constraints", constraints},
                       {"expected_response", response}});
    }
    return {{"fields", arr}};
}

Json fsm_from(const std::vector<Block>& sections, bool with_constraints, bool with_sections)
{
    static const std::regex states_re(R"(^The states are (.+)\.$)");
    static const std::regex tr_re(
        R"(^A router in state (\w+) that (?:receives|detects) (?:an? )?(.+?) (?:moves to|stays in) state (\w+)(?: and (.+?))?(?:, only if (.+?))?\.$)");
    std::vector<std::string> states;
    auto add_state = [&](const std::string& s) {
        if (std::find(states.begin(), states.end(), s) == states.end())
            states.push_back(s);
    };
    Json trs = Json::array();
    for (const auto& sec : sections) {
        for (const auto& p : paragraphs(sec.body)) {
            std::smatch m;
            if (std::regex_match(p, m, states_re)) {
                auto list = std::regex_replace(m[1].str(), std::regex(R"(\s+and\s+)"), ", ");
                for (auto& w : text::words(list)) {
                    while (!w.empty() && w.back() == ',')
                        w.pop_back();
                    if (!w.empty())
                        add_state(w);
                }
                continue;
            }
            if (!std::regex_match(p, m, tr_re))
                continue;
            add_state(m[1].str());
            add_state(m[3].str());
            Json t = {{"source", m[1].str()},
                      {"target", m[3].str()},
                      {"event", m[2].str()},
                      {"action", m[4].matched ? m[4].str() : std::string("none")},
                      {"constraints", Json::array()}};
            if (with_constraints && m[5].matched)
                t["constraints"].push_back(m[5].str());
            if (with_sections)
                t["source_sections"] = Json::array({sec.attrs.at("number")});
            trs.push_back(t);
        }
    }
    Json st = Json::array();
    for (const auto& s : states)
        st.push_back({{"name", s}, {"description", "neighbor state " + s}});
    return {{"states", st}, {"transitions", trs}};
}

Json steps(const std::string& prompt)
{
    static const std::regex step_re(
        R"(^Step (\w+): (\w+) sends (?:an? )?(\w+) to (\w+)(?: after ([\w, ]+?))?\.\s+Expect: (.+?)\.?$)");
    auto sec = block(prompt, "current_section").value_or(Block{});
    Json arr = Json::array();
    for (const auto& p : paragraphs(sec.body)) {
        std::smatch m;
        if (!std::regex_match(p, m, step_re))
            continue;
        Json before = Json::array();
        if (m[5].matched)
            for (auto& w : text::words(std::regex_replace(m[5].str(), std::regex(","), " ")))
                before.push_back(w);
        arr.push_back({{"step_id", m[1].str()},
                       {"sender_role", m[2].str()},
                       {"receiver_role", m[4].str()},
                       {"message_type", m[3].str()},
                       {"ordering_constraints", before},
                       {"expected_response", m[6].str()}});
    }
    return {{"steps", arr}};
}

Json points(const std::string& prompt)
{
    auto sec = block(prompt, "current_section").value_or(Block{});
    static const std::regex number_re(R"(\b(\d+)\b)");
    Json arr = Json::array();
    for (const auto& s : sentences(sec.body)) {
        if (s.find("\"MUST\"") != std::string::npos)
            continue;
        std::string keyword = s.find("MUST NOT") != std::string::npos ? "MUST NOT"
                              : s.find("MUST") != std::string::npos   ? "MUST"
                              : s.find("SHOULD") != std::string::npos ? "SHOULD"
                                                                      : "";
        if (keyword.empty())
            continue;
        Json params = {{"requirement", keyword}};
        std::smatch m;
        if (std::regex_search(s, m, number_re))
            params["value"] = m[1].str();
        Json tools = Json::array();
        if (contains_i(s, "between"))
            tools.push_back("zen-solver");
        arr.push_back({{"title", cap_words(s, 8)},
                       {"objective", "Verify that " + std::string(1, static_cast<char>(std::tolower(s[0]))) + s.substr(1)},
                       {"parameters", params},
                       {"reference_sections", Json::array({sec.attrs["number"]})},
                       {"additional_tools_required", tools}});
    }
    return {{"points", arr}};
}

// --- cases ------------------------------------------------------------------

Json make_case(const std::string& title, const std::string& objective, const std::vector<std::string>& refs,
               const Json& params, const std::string& exercise)
{
    auto sec = refs.empty() ? std::string("?") : refs.front();
    return {{"title", title},
            {"objective", objective},
            {"steps", Json::array({"Connect tester port p1 to DUT interface eth0 and enable MRIP on the DUT.",
                                   "Start the MRIP emulation on the tester and " + exercise + ".",
                                   "Capture the DUT messages and inspect its routing table."})},
            {"expected_results", Json::array({"The link is up and MRIP runs on the DUT.", objective,
                                              "The DUT behaviour matches section " + sec + "."})},
            {"reference_sections", refs},
            {"topology", "Tester port p1 connected to DUT interface eth0."},
            {"parameters", params}};
}

Json test_case(const std::string& prompt)
{
    auto tp = Json::parse(block(prompt, "testing_point").value_or(Block{{}, "{}"}).body);
    auto title = tp.value("title", std::string("testing point"));
    return make_case("Verify " + title, tp.value("objective", title),
                     tp.value("reference_sections", std::vector<std::string>{}), tp.value("parameters", Json::object()),
                     "exercise " + text::to_lower(title));
}

Json depth(const std::string& prompt)
{
    auto tc = block(prompt, "test_cases").value_or(Block{});
    auto sec = block(prompt, "section").value_or(Block{});
    int n = std::stoi(tc.attrs.count("count") ? tc.attrs["count"] : "0");
    int basic = std::min(100, 70 + 10 * n);
    int boundary = std::min(100, 50 + 15 * n);
    Json sugg = Json::array();
    if (boundary < 78)
        sugg.push_back("Add a case with out-of-range values for section " + sec.attrs["number"] + ".");
    return {{"basic_function_score", basic},
            {"boundary_case_score", boundary},
            {"rationale", std::to_string(n) + " case(s) exercise section " + sec.attrs["number"] + "."},
            {"suggestions", sugg}};
}

Json supplement(const std::string& prompt)
{
    auto sec = block(prompt, "section").value_or(Block{});
    auto n = sec.attrs["number"];
    return {{"cases", Json::array({make_case("Section " + n + " " + sec.attrs["title"], first_sentence(sec.body), {n},
                                             Json::object(), "drive the behaviour of section " + n)})}};
}

Json improvement(const std::string& prompt)
{
    auto sec = block(prompt, "section").value_or(Block{});
    auto n = sec.attrs["number"];
    return {{"cases", Json::array({make_case("Boundary values for section " + n, "Out-of-range input for " +
                                                 text::to_lower(sec.attrs["title"]) + " is handled as specified.",
                                             {n}, Json{{"variant", "boundary"}}, "send out-of-range values")})}};
}

Json regeneration(const std::string& prompt)
{
    auto original = Json::parse(block(prompt, "original_case").value_or(Block{{}, "{}"}).body);
    Json out = {{"title", original.value("title", std::string("case")) + " (revised)"},
                {"objective", original.value("objective", std::string())},
                {"steps", original.value("steps", Json::array())},
                {"expected_results", original.value("expected_results", Json::array())},
                {"reference_sections", original.value("reference_sections", Json::array())},
                {"topology", original.value("topology", std::string())},
                {"parameters", original.value("parameters", Json::object())}};
    out["steps"].push_back("Re-check the DUT state after the failure described in the summary.");
    out["expected_results"].push_back("The DUT state is consistent.");
    return out;
}

// --- artifacts --------------------------------------------------------------

Json intents(const std::string&)
{
    return {{"script_intents", Json::array({"connect tester port p1 to the dut interface",
                                            "configure the tester port address",
                                            "emulate a rip router on the tester port",
                                            "start the rip protocol on the tester",
                                            "check the dut configuration and the called apis"})},
            {"config_intents", Json::array({"configure the interface ip address on eth0",
                                            "enable rip version 2 with a network statement"})},
            {"topology_intents", Json::array({"tester port p1 connects to dut1 eth0"})}};
}

Json artifact(const std::string& prompt, const ResponderOptions& options)
{
    auto tc = Json::parse(block(prompt, "test_case").value_or(Block{{}, "{}"}).body);
    auto fb = block(prompt, "execution_feedback").value_or(Block{});
    bool first = fb.body.find("(first draft)") != std::string::npos;
    auto id = tc.value("case_id", std::string());
    bool typo = options.first_draft_typo && first && id.find("-fsm-") != std::string::npos;
    Json config = Json::array({"interface eth0", typo ? " ip addres 10.0.0.1 255.255.255.0" : " ip address 10.0.0.1 255.255.255.0",
                               " exit", "router rip", " version 2", " network 10.0.0.0/24", " exit"});
    Json script = Json::array({"call connect_port port=p1 dut_interface=eth0",
                               "call configure_port port=p1 address=10.0.0.2/24",
                               "call emulate_router port=p1 protocol=rip router_id=10.0.0.2",
                               "call start_protocol port=p1 protocol=rip"});
    auto params = tc.value("parameters", Json::object());
    if (params.value("variant", std::string()) == "boundary")
        script.push_back("call send_packet port=p1 protocol=rip packet_type=response count=1");
    script.push_back("assert config_has \"router rip\"");
    script.push_back("assert called start_protocol");
    return {{"tester_script", script}, {"dut_config", config}};
}

} // namespace

std::string respond(const std::string& prompt, const ResponderOptions& options)
{
    static const std::regex task_re(R"(^### TASK: (\S+))");
    std::smatch m;
    if (!std::regex_search(prompt, m, task_re))
        return "{}";
    auto task = m[1].str();
    Json out;
    if (task == "section_summary")
        out = section_summary(prompt);
    else if (task == "module_formation")
        out = modules_from(block(prompt, "sections").value_or(Block{}).body, false);
    else if (task == "module_completion")
        out = modules_from(block(prompt, "uncovered_sections").value_or(Block{}).body, true);
    else if (task == "field_modeling")
        out = fields(prompt);
    else if (task == "fsm_framework")
        out = fsm_from(blocks(block(prompt, "module_sections").value_or(Block{}).body, "section"), false, true);
    else if (task == "fsm_section")
        out = fsm_from({block(prompt, "current_section").value_or(Block{})}, false, false);
    else if (task == "fsm_refine")
        out = fsm_from({block(prompt, "current_section").value_or(Block{})}, true, false);
    else if (task == "sequence_modeling")
        out = steps(prompt);
    else if (task == "protocol_specific")
        out = points(prompt);
    else if (task == "test_case_generation")
        out = test_case(prompt);
    else if (task == "depth_judge")
        out = depth(prompt);
    else if (task == "supplement_cases")
        out = supplement(prompt);
    else if (task == "depth_improvement")
        out = improvement(prompt);
    else if (task == "case_regeneration")
        out = regeneration(prompt);
    else if (task == "orchestrator")
        out = intents(prompt);
    else if (task == "artifact_generation")
        out = artifact(prompt, options);
    else
        return "{}";
    return out.dump();
}

std::shared_ptr<llm::CompletionBackend> make_backend(ResponderOptions options)
{
    return std::make_shared<llm::CallbackBackend>([options](const std::string& p) { return respond(p, options); });
}

} // namespace conformgen::fixture
