#include "conformgen/low_level_modeling.hpp"

#include "conformgen/text.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace conformgen::modeling {

namespace {

using analysis::ProtocolModule;

std::vector<std::string> str_list(const Json& j, const char* key)
{
    std::vector<std::string> out;
    if (!j.contains(key))
        return out;
    const auto& v = j.at(key);
    if (v.is_string()) {
        if (!text::is_blank(v.get<std::string>()))
            out.push_back(v.get<std::string>());
        return out;
    }
    if (v.is_array())
        for (const auto& e : v)
            if (e.is_string())
                out.push_back(e.get<std::string>());
    return out;
}

void union_into(std::vector<std::string>& into, const std::vector<std::string>& extra)
{
    for (const auto& e : extra)
        if (std::find(into.begin(), into.end(), e) == into.end())
            into.push_back(e);
}

void sort_sections(std::vector<std::string>& v)
{
    std::sort(v.begin(), v.end(), [](const std::string& a, const std::string& b) { return text::section_less(a, b); });
    v.erase(std::unique(v.begin(), v.end()), v.end());
}

/// Module sections that exist and carry text, document order.
std::vector<std::string> content_sections(const ProtocolModule& module, const ingest::SpecTree& tree)
{
    std::vector<std::string> out;
    for (const auto& n : module.section_numbers) {
        const auto* node = tree.find(n);
        if (node && node->has_content())
            out.push_back(n);
    }
    sort_sections(out);
    return out;
}

std::vector<std::string> resolve_sections(const std::vector<std::string>& raw, const ingest::SpecTree& tree,
                                          Warnings& warnings, const std::string& where)
{
    std::vector<std::string> out;
    for (const auto& r : raw) {
        auto canon = ingest::canonical_section_number(r);
        auto n = canon ? *canon : text::trim_copy(r);
        if (!tree.contains(n)) {
            warnings.push_back({"unresolved_section", where + " cites unknown section " + r});
            continue;
        }
        union_into(out, {n});
    }
    return out;
}

llm::StructuredResult structured(llm::Gateway& gateway, const std::string& prompt, const Json& schema,
                                 const ModelingOptions& options, const std::string& section)
{
    try {
        return gateway.complete_structured(prompt, schema, options.max_repairs);
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::SchemaViolation)
            throw Error(ErrorKind::SchemaViolation, section, "section " + section + ": " + e.what());
        throw;
    }
}

const Json& fields_schema()
{
    static const Json s = Json::parse(R"({
        "type": "object", "required": ["fields"],
        "properties": {"fields": {"type": "array", "items": {
            "type": "object", "required": ["field_name"],
            "properties": {
                "field_name": {"type": "string", "minLength": 1},
                "offset_bits": {"type": "integer", "minimum": 0},
                "width_bits": {"type": "integer", "minimum": 1},
                "position": {"type": "string"},
                "value_constraints": {"type": "string"},
                "expected_response": {"type": "string"}}}}}
    })");
    return s;
}

const Json& fsm_schema()
{
    static const Json s = Json::parse(R"({
        "type": "object", "required": ["states", "transitions"],
        "properties": {
            "states": {"type": "array", "items": {"type": "object", "required": ["name"],
                "properties": {"name": {"type": "string", "minLength": 1}, "description": {"type": "string"}}}},
            "transitions": {"type": "array", "items": {"type": "object",
                "required": ["source", "target", "event"],
                "properties": {
                    "source": {"type": "string", "minLength": 1},
                    "target": {"type": "string", "minLength": 1},
                    "event": {"type": "string", "minLength": 1},
                    "action": {"type": "string"},
                    "constraints": {"type": "array", "items": {"type": "string"}},
                    "source_sections": {"type": "array", "items": {"type": "string"}}}}}}
    })");
    return s;
}

const Json& steps_schema()
{
    static const Json s = Json::parse(R"({
        "type": "object", "required": ["steps"],
        "properties": {"steps": {"type": "array", "items": {
            "type": "object", "required": ["step_id", "sender_role", "receiver_role", "message_type"],
            "properties": {
                "step_id": {"type": "string", "minLength": 1},
                "sender_role": {"type": "string"},
                "receiver_role": {"type": "string"},
                "message_type": {"type": "string", "minLength": 1},
                "ordering_constraints": {"type": "array", "items": {"type": "string"}},
                "expected_response": {"type": "string"}}}}}
    })");
    return s;
}

const Json& points_schema()
{
    static const Json s = Json::parse(R"({
        "type": "object", "required": ["points"],
        "properties": {"points": {"type": "array", "items": {
            "type": "object", "required": ["title", "objective"],
            "properties": {
                "title": {"type": "string", "minLength": 1},
                "objective": {"type": "string", "minLength": 1},
                "parameters": {"type": "object"},
                "reference_sections": {"type": "array", "items": {"type": "string"}},
                "additional_tools_required": {"type": "array", "items": {"type": "string"}}}}}}
    })");
    return s;
}

ModuleModel start(const ProtocolModule& module, analysis::AgentKind expected)
{
    if (module.assigned_agent != expected)
        throw Error(ErrorKind::PreconditionViolation, module.module_name,
                    "module '" + module.module_name + "' is assigned to " + analysis::to_string(module.assigned_agent) +
                        ", not " + analysis::to_string(expected));
    ModuleModel m;
    m.module_name = module.module_name;
    m.agent = module.assigned_agent;
    return m;
}

void flag_uncovered(ModuleModel& m, const std::vector<std::string>& sections, const std::set<std::string>& cited)
{
    for (const auto& s : sections)
        if (!cited.count(s))
            m.uncovered_sections.push_back(s);
    if (!m.uncovered_sections.empty())
        m.warnings.push_back({"uncovered_sections", "module '" + m.module_name + "' produced nothing for sections " +
                                                        text::join(m.uncovered_sections, ", ")});
}

Json fields_json(const std::vector<FieldSpec>& fields)
{
    Json arr = Json::array();
    for (const auto& f : fields)
        arr.push_back(f.to_json());
    return arr;
}

Json fsm_json(const FsmModel& fsm)
{
    Json states = Json::array();
    for (const auto& s : fsm.states) {
        Json j = {{"name", s.name}};
        if (!s.description.empty())
            j["description"] = s.description;
        if (s.inferred)
            j["inferred"] = true;
        states.push_back(j);
    }
    Json trans = Json::array();
    for (const auto& t : fsm.transitions)
        trans.push_back(t.to_json());
    return {{"states", states}, {"transitions", trans}};
}

void add_states(FsmModel& fsm, const Json& states)
{
    for (const auto& s : states) {
        auto name = text::trim_copy(s.at("name").get<std::string>());
        auto it = std::find_if(fsm.states.begin(), fsm.states.end(), [&](const FsmState& e) { return e.name == name; });
        if (it == fsm.states.end()) {
            fsm.states.push_back({name, s.value("description", ""), false});
        } else {
            it->inferred = false;
            if (it->description.empty())
                it->description = s.value("description", "");
        }
    }
}

std::vector<FsmTransition> parse_transitions(const Json& arr, const ingest::SpecTree& tree,
                                             const std::optional<std::string>& section, Warnings& warnings)
{
    std::vector<FsmTransition> out;
    for (const auto& t : arr) {
        auto tr = FsmTransition::from_json(t);
        tr.source_sections = resolve_sections(tr.source_sections, tree, warnings, "transition " + tr.source + "->" + tr.target);
        if (section)
            union_into(tr.source_sections, {*section});
        sort_sections(tr.source_sections);
        out.push_back(std::move(tr));
    }
    return out;
}

std::string section_prompt_block(const ingest::SectionNode& node)
{
    return "<section number=\"" + node.number + "\" title=\"" + node.title + "\">\n" + node.content + "\n</section>";
}

std::string first_or_empty(const std::vector<std::string>& v) { return v.empty() ? std::string{} : v.front(); }

} // namespace

// ---------------------------------------------------------------------------

std::string to_string(PointOrigin o)
{
    switch (o) {
    case PointOrigin::field: return "field";
    case PointOrigin::fsm: return "fsm";
    case PointOrigin::time_sequence: return "time_sequence";
    case PointOrigin::protocol_specific: return "protocol_specific";
    }
    return "protocol_specific";
}

std::optional<PointOrigin> origin_from_string(const std::string& s)
{
    if (s == "field")
        return PointOrigin::field;
    if (s == "fsm")
        return PointOrigin::fsm;
    if (s == "time_sequence")
        return PointOrigin::time_sequence;
    if (s == "protocol_specific")
        return PointOrigin::protocol_specific;
    return std::nullopt;
}

Json FieldSpec::to_json() const
{
    Json j = {{"field_name", field_name}};
    if (offset_bits)
        j["offset_bits"] = *offset_bits;
    if (width_bits)
        j["width_bits"] = *width_bits;
    if (!symbolic_position.empty())
        j["position"] = symbolic_position;
    j["value_constraints"] = value_constraints;
    j["expected_response"] = expected_response;
    j["source_sections"] = source_sections;
    return j;
}

FieldSpec FieldSpec::from_json(const Json& j)
{
    FieldSpec f;
    f.field_name = text::trim_copy(j.at("field_name").get<std::string>());
    if (j.contains("offset_bits") && j["offset_bits"].is_number())
        f.offset_bits = static_cast<int>(j["offset_bits"].get<double>());
    if (j.contains("width_bits") && j["width_bits"].is_number())
        f.width_bits = static_cast<int>(j["width_bits"].get<double>());
    f.symbolic_position = j.value("position", "");
    f.value_constraints = j.value("value_constraints", "");
    f.expected_response = j.value("expected_response", "");
    f.source_sections = str_list(j, "source_sections");
    return f;
}

Json FsmTransition::to_json() const
{
    return {{"source", source},     {"target", target},           {"event", event},
            {"action", action},     {"constraints", constraints}, {"source_sections", source_sections}};
}

FsmTransition FsmTransition::from_json(const Json& j)
{
    FsmTransition t;
    t.source = text::trim_copy(j.at("source").get<std::string>());
    t.target = text::trim_copy(j.at("target").get<std::string>());
    t.event = text::trim_copy(j.at("event").get<std::string>());
    t.action = j.value("action", "");
    t.constraints = str_list(j, "constraints");
    t.source_sections = str_list(j, "source_sections");
    return t;
}

bool FsmModel::has_state(const std::string& name) const
{
    return std::any_of(states.begin(), states.end(), [&](const FsmState& s) { return s.name == name; });
}

Json MessageStep::to_json() const
{
    return {{"step_id", step_id},
            {"sender_role", sender_role},
            {"receiver_role", receiver_role},
            {"message_type", message_type},
            {"ordering_constraints", ordering_constraints},
            {"expected_response", expected_response},
            {"source_sections", source_sections}};
}

MessageStep MessageStep::from_json(const Json& j)
{
    MessageStep s;
    s.step_id = text::trim_copy(j.at("step_id").get<std::string>());
    s.sender_role = j.value("sender_role", "");
    s.receiver_role = j.value("receiver_role", "");
    s.message_type = j.value("message_type", "");
    s.ordering_constraints = str_list(j, "ordering_constraints");
    s.expected_response = j.value("expected_response", "");
    s.source_sections = str_list(j, "source_sections");
    return s;
}

Json TestingPoint::to_json() const
{
    return {{"point_id", point_id},
            {"module_name", module_name},
            {"title", title},
            {"objective", objective},
            {"parameters", parameters},
            {"reference_sections", reference_sections},
            {"origin", to_string(origin)},
            {"additional_tools_required", additional_tools_required}};
}

TestingPoint TestingPoint::from_json(const Json& j)
{
    TestingPoint p;
    p.point_id = j.value("point_id", "");
    p.module_name = j.value("module_name", "");
    p.title = j.at("title").get<std::string>();
    p.objective = j.value("objective", "");
    p.parameters = j.value("parameters", Json::object());
    p.reference_sections = str_list(j, "reference_sections");
    auto o = origin_from_string(j.value("origin", "protocol_specific"));
    p.origin = o ? *o : PointOrigin::protocol_specific;
    p.additional_tools_required = str_list(j, "additional_tools_required");
    return p;
}

// ---------------------------------------------------------------------------

Toolkit::Toolkit(std::vector<ToolDescriptor> tools) : tools_(std::move(tools))
{
    std::set<std::string> seen;
    for (const auto& t : tools_)
        if (!seen.insert(t.tool_name).second)
            throw Error(ErrorKind::InvalidConfig, t.tool_name, "duplicate tool '" + t.tool_name + "'");
}

const ToolDescriptor* Toolkit::find(const std::string& name) const
{
    auto it = std::find_if(tools_.begin(), tools_.end(), [&](const ToolDescriptor& t) { return t.tool_name == name; });
    return it == tools_.end() ? nullptr : &*it;
}

std::string Toolkit::describe() const
{
    if (tools_.empty())
        return "(no tools)";
    std::vector<std::string> lines;
    for (const auto& t : tools_)
        lines.push_back("- " + t.tool_name + ": " + t.functionality + " Input: " + t.input_spec +
                        " Output: " + t.output_spec);
    return text::join(lines, "\n");
}

void Toolkit::set_handler(const std::string& name, Handler handler)
{
    if (!find(name))
        throw Error(ErrorKind::InvalidConfig, name, "no tool named '" + name + "'");
    handlers_[name] = std::move(handler);
}

std::optional<std::string> Toolkit::invoke(const std::string& name, const std::string& input) const
{
    auto it = handlers_.find(name);
    if (it == handlers_.end())
        return std::nullopt;
    return it->second(input);
}

Toolkit Toolkit::from_json(const Json& j)
{
    std::vector<ToolDescriptor> tools;
    for (const auto& t : j.at("tools"))
        tools.push_back({t.at("tool_name").get<std::string>(), t.value("functionality", ""), t.value("input", ""),
                         t.value("output", "")});
    return Toolkit(std::move(tools));
}

Toolkit Toolkit::defaults(const std::optional<std::filesystem::path>& data_dir)
{
    return from_json(load_json_data("modeling/toolkit.json", data_dir));
}

// ---------------------------------------------------------------------------

Json ModuleModel::to_json() const
{
    Json j = {{"module_name", module_name}, {"agent", analysis::to_string(agent)}};
    if (packet) {
        j["packet"] = {{"fields", fields_json(packet->fields)}, {"flagged_empty", packet->flagged_empty}};
    }
    if (fsm)
        j["fsm"] = fsm_json(*fsm);
    if (sequence) {
        Json steps = Json::array();
        for (const auto& s : sequence->steps)
            steps.push_back(s.to_json());
        j["sequence"] = {{"steps", steps}};
    }
    Json pts = Json::array();
    for (const auto& p : specific_points)
        pts.push_back(p.to_json());
    j["specific_points"] = pts;
    j["uncovered_sections"] = uncovered_sections;
    Json warns = Json::array();
    for (const auto& w : warnings)
        warns.push_back({{"code", w.code}, {"message", w.message}});
    j["warnings"] = warns;
    return j;
}

ModuleModel ModuleModel::from_json(const Json& j)
{
    ModuleModel m;
    m.module_name = j.at("module_name").get<std::string>();
    auto agent = analysis::agent_from_string(j.at("agent").get<std::string>());
    if (!agent)
        throw Error(ErrorKind::UnknownAgent, j.at("agent").get<std::string>(), "unknown agent in model artifact");
    m.agent = *agent;
    if (j.contains("packet")) {
        PacketModel p;
        for (const auto& f : j["packet"].at("fields"))
            p.fields.push_back(FieldSpec::from_json(f));
        p.flagged_empty = j["packet"].value("flagged_empty", false);
        m.packet = std::move(p);
    }
    if (j.contains("fsm")) {
        FsmModel f;
        for (const auto& s : j["fsm"].at("states"))
            f.states.push_back({s.at("name").get<std::string>(), s.value("description", ""), s.value("inferred", false)});
        for (const auto& t : j["fsm"].at("transitions"))
            f.transitions.push_back(FsmTransition::from_json(t));
        m.fsm = std::move(f);
    }
    if (j.contains("sequence")) {
        SequenceModel s;
        for (const auto& st : j["sequence"].at("steps"))
            s.steps.push_back(MessageStep::from_json(st));
        m.sequence = std::move(s);
    }
    for (const auto& p : j.value("specific_points", Json::array()))
        m.specific_points.push_back(TestingPoint::from_json(p));
    m.uncovered_sections = j.value("uncovered_sections", std::vector<std::string>{});
    for (const auto& w : j.value("warnings", Json::array()))
        m.warnings.push_back({w.at("code").get<std::string>(), w.at("message").get<std::string>()});
    return m;
}

// ---------------------------------------------------------------------------

std::vector<std::string> header_keywords(const std::optional<std::filesystem::path>& data_dir)
{
    auto j = load_json_data("modeling/reorder_keywords.json", data_dir);
    return j.at("header_keywords").get<std::vector<std::string>>();
}

std::vector<std::string> reorder_header_first(const std::vector<std::string>& sections, const ingest::SpecTree& tree,
                                              const std::vector<std::string>& keywords)
{
    std::vector<std::string> ordered = sections;
    sort_sections(ordered);
    std::vector<std::string> head, body;
    for (const auto& s : ordered) {
        const auto* node = tree.find(s);
        auto title = node ? text::to_lower(node->title) : std::string{};
        bool is_header = std::any_of(keywords.begin(), keywords.end(),
                                     [&](const std::string& k) { return title.find(text::to_lower(k)) != std::string::npos; });
        (is_header ? head : body).push_back(s);
    }
    head.insert(head.end(), body.begin(), body.end());
    return head;
}

ModuleModel model_fields(const ProtocolModule& module, const ingest::SpecTree& tree, llm::Gateway& gateway,
                         const ModelingOptions& options)
{
    auto m = start(module, analysis::AgentKind::packet_field);
    auto tmpl = llm::PromptTemplate::load("field_modeling", options.data_dir);
    auto order = reorder_header_first(content_sections(module, tree), tree, header_keywords(options.data_dir));
    PacketModel packet;
    std::set<std::string> cited;
    std::size_t round = 0;
    for (const auto& number : order) {
        ++round;
        const auto& node = tree.at(number);
        auto prompt = tmpl.render({{"module_name", module.module_name},
                                   {"module_description", module.description},
                                   {"spec_title", tree.metadata.title},
                                   {"round", std::to_string(round)},
                                   {"round_count", std::to_string(order.size())},
                                   {"previous_fields", packet.fields.empty() ? "(none)" : fields_json(packet.fields).dump(2)},
                                   {"section_number", node.number},
                                   {"section_title", node.title},
                                   {"section_content", node.content}});
        auto result = structured(gateway, prompt, fields_schema(), options, number);
        for (const auto& f : result.value.at("fields")) {
            auto spec = FieldSpec::from_json(f);
            spec.source_sections = {number};
            auto key = text::to_lower(spec.field_name);
            auto it = std::find_if(packet.fields.begin(), packet.fields.end(),
                                   [&](const FieldSpec& e) { return text::to_lower(e.field_name) == key; });
            if (it == packet.fields.end()) {
                packet.fields.push_back(std::move(spec));
            } else {
                union_into(it->source_sections, spec.source_sections);
                if (!it->offset_bits)
                    it->offset_bits = spec.offset_bits;
                if (!it->width_bits)
                    it->width_bits = spec.width_bits;
                if (it->symbolic_position.empty())
                    it->symbolic_position = spec.symbolic_position;
                if (!spec.value_constraints.empty() && it->value_constraints.find(spec.value_constraints) == std::string::npos)
                    it->value_constraints += it->value_constraints.empty() ? spec.value_constraints : "; " + spec.value_constraints;
                if (!spec.expected_response.empty() && it->expected_response.find(spec.expected_response) == std::string::npos)
                    it->expected_response += it->expected_response.empty() ? spec.expected_response : "; " + spec.expected_response;
            }
            cited.insert(number);
        }
    }
    for (auto& f : packet.fields) {
        sort_sections(f.source_sections);
        if (f.width_bits && *f.width_bits <= 0)
            f.width_bits.reset();
    }
    if (packet.fields.empty()) {
        packet.flagged_empty = true;
        m.warnings.push_back({"empty_model", "module '" + module.module_name + "' yielded no fields"});
    }
    m.packet = std::move(packet);
    flag_uncovered(m, order, cited);
    return m;
}

void integrate_transitions(FsmModel& into, const std::vector<FsmTransition>& incoming)
{
    for (const auto& t : incoming) {
        auto it = std::find_if(into.transitions.begin(), into.transitions.end(), [&](const FsmTransition& e) {
            return e.source == t.source && e.event == t.event && e.target == t.target;
        });
        if (it == into.transitions.end()) {
            into.transitions.push_back(t);
            continue;
        }
        union_into(it->constraints, t.constraints);
        union_into(it->source_sections, t.source_sections);
        sort_sections(it->source_sections);
        if (it->action.empty())
            it->action = t.action;
    }
}

void resolve_dangling(FsmModel& model, bool strict, Warnings& warnings)
{
    for (const auto& t : model.transitions) {
        for (const auto* name : {&t.source, &t.target}) {
            if (model.has_state(*name))
                continue;
            if (strict)
                throw Error(ErrorKind::DanglingState, *name, "transition references undeclared state '" + *name + "'");
            model.states.push_back({*name, "", true});
            warnings.push_back({"inferred_state", "state '" + *name + "' was declared from a transition"});
        }
    }
    std::map<std::pair<std::string, std::string>, std::vector<const FsmTransition*>> by_trigger;
    for (const auto& t : model.transitions)
        by_trigger[{t.source, t.event}].push_back(&t);
    for (const auto& [key, list] : by_trigger) {
        for (std::size_t a = 0; a < list.size(); ++a)
            for (std::size_t b = a + 1; b < list.size(); ++b) {
                auto ca = list[a]->constraints, cb = list[b]->constraints;
                std::sort(ca.begin(), ca.end());
                std::sort(cb.begin(), cb.end());
                if (ca == cb)
                    warnings.push_back({"nondeterministic_transition", "state '" + key.first + "' on '" + key.second +
                                                                           "' has several targets with equal constraints"});
            }
    }
}

ModuleModel model_fsm(const ProtocolModule& module, const ingest::SpecTree& tree, llm::Gateway& gateway,
                      const ModelingOptions& options)
{
    auto m = start(module, analysis::AgentKind::fsm);
    auto sections = content_sections(module, tree);
    auto framework_t = llm::PromptTemplate::load("fsm_framework", options.data_dir);
    auto section_t = llm::PromptTemplate::load("fsm_section", options.data_dir);
    auto refine_t = llm::PromptTemplate::load("fsm_refine", options.data_dir);

    FsmModel fsm;
    std::vector<std::string> blocks;
    for (const auto& n : sections)
        blocks.push_back(section_prompt_block(tree.at(n)));
    if (!sections.empty()) {
        auto prompt = framework_t.render({{"module_name", module.module_name},
                                          {"module_description", module.description},
                                          {"spec_title", tree.metadata.title},
                                          {"module_content", text::join(blocks, "\n\n")}});
        auto result = structured(gateway, prompt, fsm_schema(), options, module.module_name);
        add_states(fsm, result.value.at("states"));
        integrate_transitions(fsm, parse_transitions(result.value.at("transitions"), tree, std::nullopt, m.warnings));
    }

    std::set<std::string> cited;
    for (const auto& number : sections) {
        const auto& node = tree.at(number);
        auto prompt = section_t.render({{"module_name", module.module_name},
                                        {"spec_title", tree.metadata.title},
                                        {"current_model", fsm_json(fsm).dump(2)},
                                        {"section_number", node.number},
                                        {"section_title", node.title},
                                        {"section_content", node.content}});
        auto extracted = structured(gateway, prompt, fsm_schema(), options, number).value;
        Json view = {{"states", extracted.at("states")}, {"transitions", extracted.at("transitions")}};
        auto refine_prompt = refine_t.render({{"spec_title", tree.metadata.title},
                                              {"extracted", view.dump(2)},
                                              {"section_number", node.number},
                                              {"section_title", node.title},
                                              {"section_content", node.content}});
        auto refined = structured(gateway, refine_prompt, fsm_schema(), options, number).value;
        add_states(fsm, refined.at("states"));
        auto trans = parse_transitions(refined.at("transitions"), tree, number, m.warnings);
        if (!trans.empty())
            cited.insert(number);
        integrate_transitions(fsm, trans);
    }
    for (const auto& t : fsm.transitions)
        cited.insert(t.source_sections.begin(), t.source_sections.end());
    resolve_dangling(fsm, options.strict_states, m.warnings);
    m.fsm = std::move(fsm);
    flag_uncovered(m, sections, cited);
    return m;
}

std::vector<MessageStep> order_steps(const std::vector<MessageStep>& steps, Warnings& warnings)
{
    std::map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < steps.size(); ++i)
        pos.emplace(steps[i].step_id, i);
    std::vector<std::set<std::size_t>> preds(steps.size());
    std::vector<std::vector<std::size_t>> succs(steps.size());
    for (std::size_t i = 0; i < steps.size(); ++i) {
        for (const auto& c : steps[i].ordering_constraints) {
            auto it = pos.find(c);
            if (it == pos.end()) {
                warnings.push_back({"unknown_step", "step '" + steps[i].step_id + "' waits on unknown step '" + c + "'"});
                continue;
            }
            if (it->second == i || !preds[i].insert(it->second).second)
                continue;
            succs[it->second].push_back(i);
        }
    }
    std::vector<std::size_t> indeg(steps.size());
    for (std::size_t i = 0; i < steps.size(); ++i)
        indeg[i] = preds[i].size();
    std::set<std::size_t> ready;
    for (std::size_t i = 0; i < steps.size(); ++i)
        if (indeg[i] == 0)
            ready.insert(i);
    std::vector<MessageStep> out;
    while (!ready.empty()) {
        auto i = *ready.begin();
        ready.erase(ready.begin());
        out.push_back(steps[i]);
        for (auto s : succs[i])
            if (--indeg[s] == 0)
                ready.insert(s);
    }
    if (out.size() != steps.size()) {
        std::vector<std::string> stuck;
        for (std::size_t i = 0; i < steps.size(); ++i)
            if (indeg[i] > 0)
                stuck.push_back(steps[i].step_id);
        throw Error(ErrorKind::CyclicOrdering, text::join(stuck, ","),
                    "ordering constraints form a cycle among steps " + text::join(stuck, ", "));
    }
    return out;
}

ModuleModel model_sequence(const ProtocolModule& module, const ingest::SpecTree& tree, llm::Gateway& gateway,
                           const ModelingOptions& options)
{
    auto m = start(module, analysis::AgentKind::time_sequence);
    auto tmpl = llm::PromptTemplate::load("sequence_modeling", options.data_dir);
    auto sections = content_sections(module, tree);
    std::vector<MessageStep> steps;
    std::set<std::string> cited;
    std::size_t round = 0;
    for (const auto& number : sections) {
        ++round;
        const auto& node = tree.at(number);
        Json prev = Json::array();
        for (const auto& s : steps)
            prev.push_back(s.to_json());
        auto prompt = tmpl.render({{"module_name", module.module_name},
                                   {"module_description", module.description},
                                   {"spec_title", tree.metadata.title},
                                   {"round", std::to_string(round)},
                                   {"round_count", std::to_string(sections.size())},
                                   {"previous_steps", steps.empty() ? "(none)" : prev.dump(2)},
                                   {"section_number", node.number},
                                   {"section_title", node.title},
                                   {"section_content", node.content}});
        auto result = structured(gateway, prompt, steps_schema(), options, number);
        for (const auto& s : result.value.at("steps")) {
            auto step = MessageStep::from_json(s);
            step.source_sections = {number};
            auto it = std::find_if(steps.begin(), steps.end(), [&](const MessageStep& e) { return e.step_id == step.step_id; });
            if (it == steps.end()) {
                steps.push_back(std::move(step));
            } else {
                union_into(it->ordering_constraints, step.ordering_constraints);
                union_into(it->source_sections, step.source_sections);
                if (it->expected_response.empty())
                    it->expected_response = step.expected_response;
            }
            cited.insert(number);
        }
    }
    SequenceModel seq;
    seq.steps = order_steps(steps, m.warnings);
    for (auto& s : seq.steps)
        sort_sections(s.source_sections);
    m.sequence = std::move(seq);
    flag_uncovered(m, sections, cited);
    return m;
}

ModuleModel model_protocol_specific(const ProtocolModule& module, const ingest::SpecTree& tree,
                                    const analysis::SummarySet& summaries, const Toolkit& toolkit,
                                    llm::Gateway& gateway, const ModelingOptions& options)
{
    auto m = start(module, analysis::AgentKind::protocol_specific);
    auto tmpl = llm::PromptTemplate::load("protocol_specific", options.data_dir);
    auto sections = content_sections(module, tree);
    std::set<std::string> cited;
    for (const auto& number : sections) {
        const auto& node = tree.at(number);
        std::vector<std::string> others;
        for (const auto& o : sections) {
            if (o == number)
                continue;
            const auto* s = summaries.find(o);
            others.push_back("- " + o + " " + tree.at(o).title + ": " + (s ? s->summary : std::string("(no summary)")));
        }
        auto prompt = tmpl.render({{"module_name", module.module_name},
                                   {"module_description", module.description},
                                   {"spec_title", tree.metadata.title},
                                   {"other_summaries", others.empty() ? "(none)" : text::join(others, "\n")},
                                   {"toolkit", toolkit.describe()},
                                   {"section_number", node.number},
                                   {"section_title", node.title},
                                   {"section_content", node.content}});
        auto result = structured(gateway, prompt, points_schema(), options, number);
        for (const auto& p : result.value.at("points")) {
            TestingPoint tp;
            tp.module_name = module.module_name;
            tp.origin = PointOrigin::protocol_specific;
            tp.title = p.at("title").get<std::string>();
            tp.objective = p.at("objective").get<std::string>();
            tp.parameters = p.value("parameters", Json::object());
            tp.reference_sections = resolve_sections(str_list(p, "reference_sections"), tree, m.warnings, "point '" + tp.title + "'");
            union_into(tp.reference_sections, {number});
            sort_sections(tp.reference_sections);
            tp.additional_tools_required = str_list(p, "additional_tools_required");
            for (const auto& tool : tp.additional_tools_required)
                if (!toolkit.find(tool))
                    m.warnings.push_back({"unknown_tool", "point '" + tp.title + "' requests tool '" + tool +
                                                              "' outside the registry"});
            m.specific_points.push_back(std::move(tp));
            cited.insert(number);
        }
    }
    flag_uncovered(m, sections, cited);
    return m;
}

ModuleModel model_module(const ProtocolModule& module, const ingest::SpecTree& tree,
                         const analysis::SummarySet& summaries, const Toolkit& toolkit, llm::Gateway& gateway,
                         const ModelingOptions& options)
{
    switch (module.assigned_agent) {
    case analysis::AgentKind::packet_field: return model_fields(module, tree, gateway, options);
    case analysis::AgentKind::fsm: return model_fsm(module, tree, gateway, options);
    case analysis::AgentKind::time_sequence: return model_sequence(module, tree, gateway, options);
    case analysis::AgentKind::protocol_specific:
        return model_protocol_specific(module, tree, summaries, toolkit, gateway, options);
    }
    throw Error(ErrorKind::UnknownAgent, module.module_name, "unhandled agent");
}

// ---------------------------------------------------------------------------

std::vector<TestingPoint> enumerate_points(const std::vector<ModuleModel>& models)
{
    std::vector<TestingPoint> points;
    for (const auto& m : models) {
        if (m.packet) {
            for (const auto& f : m.packet->fields) {
                TestingPoint p;
                p.module_name = m.module_name;
                p.origin = PointOrigin::field;
                p.title = "Field " + f.field_name;
                p.objective = "Verify handling of the " + f.field_name + " field";
                if (!f.value_constraints.empty())
                    p.objective += " under the constraint: " + f.value_constraints;
                if (!f.expected_response.empty())
                    p.objective += ". Expected: " + f.expected_response;
                p.parameters["field_name"] = f.field_name;
                if (f.offset_bits)
                    p.parameters["offset_bits"] = *f.offset_bits;
                if (f.width_bits)
                    p.parameters["width_bits"] = *f.width_bits;
                if (!f.symbolic_position.empty())
                    p.parameters["position"] = f.symbolic_position;
                if (!f.value_constraints.empty())
                    p.parameters["value_constraints"] = f.value_constraints;
                p.reference_sections = f.source_sections;
                points.push_back(std::move(p));
            }
        }
        if (m.fsm) {
            for (const auto& t : m.fsm->transitions) {
                TestingPoint p;
                p.module_name = m.module_name;
                p.origin = PointOrigin::fsm;
                p.title = "Transition " + t.source + " -> " + t.target + " on " + t.event;
                p.objective = "Verify that in state " + t.source + " the event " + t.event + " leads to state " + t.target;
                if (!t.action.empty())
                    p.objective += " with action: " + t.action;
                p.parameters["source_state"] = t.source;
                p.parameters["target_state"] = t.target;
                p.parameters["event"] = t.event;
                if (!t.action.empty())
                    p.parameters["action"] = t.action;
                if (!t.constraints.empty())
                    p.parameters["constraints"] = t.constraints;
                p.reference_sections = t.source_sections;
                points.push_back(std::move(p));
            }
        }
        if (m.sequence) {
            for (const auto& s : m.sequence->steps) {
                TestingPoint p;
                p.module_name = m.module_name;
                p.origin = PointOrigin::time_sequence;
                p.title = "Message " + s.message_type + " from " + s.sender_role + " to " + s.receiver_role;
                p.objective = "Verify the " + s.message_type + " exchange and its ordering";
                if (!s.expected_response.empty())
                    p.objective += ". Expected: " + s.expected_response;
                p.parameters["step_id"] = s.step_id;
                p.parameters["sender_role"] = s.sender_role;
                p.parameters["receiver_role"] = s.receiver_role;
                p.parameters["message_type"] = s.message_type;
                if (!s.ordering_constraints.empty())
                    p.parameters["after"] = s.ordering_constraints;
                p.reference_sections = s.source_sections;
                points.push_back(std::move(p));
            }
        }
        for (const auto& sp : m.specific_points) {
            auto p = sp;
            p.module_name = m.module_name;
            points.push_back(std::move(p));
        }
    }
    std::stable_sort(points.begin(), points.end(), [](const TestingPoint& a, const TestingPoint& b) {
        if (a.origin != b.origin)
            return a.origin < b.origin;
        auto sa = first_or_empty(a.reference_sections), sb = first_or_empty(b.reference_sections);
        if (sa != sb)
            return text::section_less(sa, sb);
        return false;
    });
    std::map<PointOrigin, int> counter;
    for (auto& p : points) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%04d", ++counter[p.origin]);
        p.point_id = to_string(p.origin) + "-" + buf;
    }
    return points;
}

} // namespace conformgen::modeling
