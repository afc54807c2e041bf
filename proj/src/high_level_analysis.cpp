#include "conformgen/high_level_analysis.hpp"

#include "conformgen/text.hpp"

#include <algorithm>

namespace conformgen::analysis {

namespace {

std::string toc_listing(const ingest::SpecTree& tree)
{
    std::vector<std::string> lines;
    for (auto k : tree.preorder()) {
        const auto& n = tree.nodes()[k];
        lines.push_back(std::string(static_cast<std::size_t>(2 * (n.depth - 1)), ' ') + n.number + " " + n.title);
    }
    return text::join(lines, "\n");
}

std::string summary_line(const ingest::SpecTree& tree, const SectionSummary& s)
{
    const auto* node = tree.find(s.section_number);
    return "[" + s.section_number + "] " + (node ? node->title : std::string{}) + ": " + s.summary +
           " (classification: " + to_string(s.classification) + ", test importance: " +
           std::to_string(s.test_importance) + ")";
}

std::string key_information(const ingest::SpecTree& tree, const SummarySet& summaries,
                            const std::vector<std::string>& numbers)
{
    std::vector<std::string> lines;
    for (const auto& number : numbers) {
        const auto* node = tree.find(number);
        const auto* s = summaries.find(number);
        std::string line = "- section " + number + " | title: " + (node ? node->title : std::string{});
        if (s) {
            line += " | test importance: " + std::to_string(s->test_importance) + " (" +
                    importance_label(s->test_importance) + ") | summary: " + s->summary;
        }
        lines.push_back(std::move(line));
    }
    return text::join(lines, "\n");
}

Json modules_brief(const ModuleSet& set)
{
    Json arr = Json::array();
    for (const auto& m : set.modules)
        arr.push_back({{"module_name", m.module_name},
                       {"assigned_agent", to_string(m.assigned_agent)},
                       {"section_numbers", m.section_numbers}});
    return arr;
}

std::vector<std::string> sort_sections(std::vector<std::string> v)
{
    std::sort(v.begin(), v.end(), [](const std::string& a, const std::string& b) { return text::section_less(a, b); });
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

} // namespace

std::string to_string(Classification c)
{
    switch (c) {
    case Classification::functional: return "functional";
    case Classification::descriptive: return "descriptive";
    case Classification::appendix: return "appendix";
    case Classification::configuration: return "configuration";
    }
    return "descriptive";
}

std::optional<Classification> classification_from_string(const std::string& s)
{
    auto l = text::to_lower(text::trim(s));
    if (l == "functional")
        return Classification::functional;
    if (l == "descriptive")
        return Classification::descriptive;
    if (l == "appendix")
        return Classification::appendix;
    if (l == "configuration")
        return Classification::configuration;
    return std::nullopt;
}

std::string importance_label(int test_importance)
{
    if (test_importance >= 67)
        return "high";
    if (test_importance >= 34)
        return "medium";
    return "low";
}

std::string to_string(AgentKind a)
{
    switch (a) {
    case AgentKind::packet_field: return "packet_field";
    case AgentKind::fsm: return "fsm";
    case AgentKind::time_sequence: return "time_sequence";
    case AgentKind::protocol_specific: return "protocol_specific";
    }
    return "protocol_specific";
}

std::optional<AgentKind> agent_from_string(const std::string& s)
{
    if (s == "packet_field")
        return AgentKind::packet_field;
    if (s == "fsm")
        return AgentKind::fsm;
    if (s == "time_sequence")
        return AgentKind::time_sequence;
    if (s == "protocol_specific")
        return AgentKind::protocol_specific;
    return std::nullopt;
}

Json SectionSummary::to_json() const
{
    Json j = {{"section_number", section_number},
              {"summary", summary},
              {"references", references},
              {"classification", to_string(classification)},
              {"test_importance", test_importance}};
    if (!unresolved_references.empty())
        j["unresolved_references"] = unresolved_references;
    if (empty_body)
        j["empty_body"] = true;
    return j;
}

SectionSummary SectionSummary::from_json(const Json& j)
{
    SectionSummary s;
    s.section_number = j.at("section_number").get<std::string>();
    s.summary = j.value("summary", "");
    s.references = j.value("references", std::vector<std::string>{});
    s.unresolved_references = j.value("unresolved_references", std::vector<std::string>{});
    auto c = classification_from_string(j.value("classification", "descriptive"));
    if (!c)
        throw Error(ErrorKind::UnknownClassification, j.value("classification", ""), "unknown classification");
    s.classification = *c;
    s.test_importance = j.value("test_importance", 0);
    s.empty_body = j.value("empty_body", false);
    return s;
}

const SectionSummary* SummarySet::find(const std::string& number) const
{
    auto it = std::find_if(items.begin(), items.end(), [&](const SectionSummary& s) { return s.section_number == number; });
    return it == items.end() ? nullptr : &*it;
}

Json SummarySet::to_json() const
{
    Json arr = Json::array();
    for (const auto& s : items)
        arr.push_back(s.to_json());
    return {{"summaries", arr}};
}

SummarySet SummarySet::from_json(const Json& j)
{
    SummarySet set;
    for (const auto& s : j.at("summaries"))
        set.items.push_back(SectionSummary::from_json(s));
    return set;
}

const AgentDescriptor* AgentCatalog::find(const std::string& name) const
{
    auto it = std::find_if(agents.begin(), agents.end(), [&](const AgentDescriptor& a) { return to_string(a.kind) == name; });
    return it == agents.end() ? nullptr : &*it;
}

std::string AgentCatalog::describe() const
{
    std::vector<std::string> lines;
    for (const auto& a : agents) {
        lines.push_back("- " + to_string(a.kind) + ": " + a.functionality);
        lines.push_back("  capabilities: " + a.capabilities);
        lines.push_back("  input: " + a.input_spec);
        lines.push_back("  output: " + a.output_spec);
    }
    return text::join(lines, "\n");
}

AgentCatalog AgentCatalog::from_json(const Json& j)
{
    AgentCatalog c;
    for (const auto& a : j.at("agents")) {
        auto name = a.at("name").get<std::string>();
        auto kind = agent_from_string(name);
        if (!kind)
            throw Error(ErrorKind::UnknownAgent, name, "agent catalog names unknown agent '" + name + "'");
        c.agents.push_back({*kind, a.value("functionality", ""), a.value("capabilities", ""), a.value("input", ""),
                            a.value("output", "")});
    }
    return c;
}

AgentCatalog AgentCatalog::defaults(const std::optional<std::filesystem::path>& data_dir)
{
    return from_json(load_json_data("modeling/agent_catalog.json", data_dir));
}

Json ProtocolModule::to_json() const
{
    return {{"module_name", module_name},
            {"description", description},
            {"assigned_agent", to_string(assigned_agent)},
            {"section_numbers", section_numbers}};
}

ProtocolModule ProtocolModule::from_json(const Json& j)
{
    ProtocolModule m;
    m.module_name = j.at("module_name").get<std::string>();
    m.description = j.value("description", "");
    auto agent = j.at("assigned_agent").get<std::string>();
    auto kind = agent_from_string(agent);
    if (!kind)
        throw Error(ErrorKind::UnknownAgent, agent, "unknown agent '" + agent + "'");
    m.assigned_agent = *kind;
    m.section_numbers = j.at("section_numbers").get<std::vector<std::string>>();
    return m;
}

const ProtocolModule* ModuleSet::find(const std::string& name) const
{
    auto it = std::find_if(modules.begin(), modules.end(), [&](const ProtocolModule& m) { return m.module_name == name; });
    return it == modules.end() ? nullptr : &*it;
}

std::set<std::string> ModuleSet::covered_sections() const
{
    std::set<std::string> out;
    for (const auto& m : modules)
        out.insert(m.section_numbers.begin(), m.section_numbers.end());
    return out;
}

Json ModuleSet::to_json() const
{
    Json arr = Json::array();
    for (const auto& m : modules)
        arr.push_back(m.to_json());
    Json warns = Json::array();
    for (const auto& w : warnings)
        warns.push_back({{"code", w.code}, {"message", w.message}});
    return {{"modules", arr},
            {"iteration_count", iteration_count},
            {"uncovered_after", uncovered_after},
            {"uncovered_history", uncovered_history},
            {"warnings", warns}};
}

ModuleSet ModuleSet::from_json(const Json& j)
{
    ModuleSet set;
    for (const auto& m : j.at("modules"))
        set.modules.push_back(ProtocolModule::from_json(m));
    set.iteration_count = j.value("iteration_count", 0);
    set.uncovered_after = j.value("uncovered_after", std::vector<std::string>{});
    set.uncovered_history = j.value("uncovered_history", std::vector<std::size_t>{});
    for (const auto& w : j.value("warnings", Json::array()))
        set.warnings.push_back({w.at("code").get<std::string>(), w.at("message").get<std::string>()});
    return set;
}

const Json& summary_schema()
{
    static const Json schema = Json::parse(R"({
        "type": "object",
        "required": ["summary", "references", "classification", "test_importance"],
        "properties": {
            "summary": {"type": "string", "minLength": 1},
            "references": {"type": "array", "items": {"type": "string"}},
            "classification": {"type": "string", "enum": ["functional", "descriptive", "appendix", "configuration"]},
            "test_importance": {"type": "integer", "minimum": 0, "maximum": 100}
        }
    })");
    return schema;
}

const Json& modules_schema()
{
    static const Json schema = Json::parse(R"({
        "type": "object",
        "required": ["modules"],
        "properties": {
            "modules": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["module_name", "assigned_agent", "section_numbers"],
                    "properties": {
                        "module_name": {"type": "string", "minLength": 1},
                        "description": {"type": "string"},
                        "assigned_agent": {"type": "string"},
                        "section_numbers": {"type": "array", "minItems": 1, "items": {"type": "string"}}
                    }
                }
            }
        }
    })");
    return schema;
}

SummarySet summarize_sections(const ingest::SpecTree& tree, llm::Gateway& gateway, const AnalysisOptions& options)
{
    auto tmpl = llm::PromptTemplate::load("section_summary", options.data_dir);
    auto toc = toc_listing(tree);
    SummarySet out;
    std::vector<std::string> previous;
    for (auto k : tree.preorder()) {
        const auto& node = tree.nodes()[k];
        SectionSummary s;
        s.section_number = node.number;
        if (!node.has_content()) {
            s.summary = "Section " + node.number + " (" + node.title + ") has no body text of its own.";
            s.classification = Classification::descriptive;
            s.test_importance = 0;
            s.empty_body = true;
        } else {
            auto prompt = tmpl.render({{"spec_title", tree.metadata.title},
                                       {"spec_number", tree.metadata.spec_number},
                                       {"toc", toc},
                                       {"previous_summaries", previous.empty() ? "(none)" : text::join(previous, "\n")},
                                       {"section_number", node.number},
                                       {"section_title", node.title},
                                       {"section_content", node.content}});
            llm::StructuredResult result;
            try {
                result = gateway.complete_structured(prompt, summary_schema(), options.max_repairs);
            } catch (const Error& e) {
                if (e.kind() == ErrorKind::SchemaViolation)
                    throw Error(ErrorKind::SchemaViolation, node.number,
                                "summary of section " + node.number + ": " + e.what());
                throw;
            }
            const auto& v = result.value;
            s.summary = v.at("summary").get<std::string>();
            s.classification = *classification_from_string(v.at("classification").get<std::string>());
            s.test_importance = static_cast<int>(v.at("test_importance").get<double>());
            for (const auto& r : v.at("references")) {
                auto raw = r.get<std::string>();
                auto canon = ingest::canonical_section_number(raw);
                auto number = canon ? *canon : text::trim_copy(raw);
                if (number == node.number)
                    continue;
                s.references.push_back(number);
                if (!tree.contains(number))
                    s.unresolved_references.push_back(number);
            }
        }
        previous.push_back(summary_line(tree, s));
        out.items.push_back(std::move(s));
    }
    return out;
}

std::vector<ProtocolModule> parse_modules(const Json& value, const ingest::SpecTree& tree, const AgentCatalog& catalog,
                                          Warnings& warnings)
{
    std::vector<ProtocolModule> out;
    for (const auto& m : value.at("modules")) {
        auto agent = m.at("assigned_agent").get<std::string>();
        auto kind = agent_from_string(agent);
        if (!kind || !catalog.find(agent))
            throw Error(ErrorKind::UnknownAgent, agent, "module names agent '" + agent + "' outside the catalog");
        ProtocolModule pm;
        pm.module_name = m.at("module_name").get<std::string>();
        pm.description = m.value("description", "");
        pm.assigned_agent = *kind;
        for (const auto& s : m.at("section_numbers")) {
            auto raw = s.get<std::string>();
            auto canon = ingest::canonical_section_number(raw);
            auto number = canon ? *canon : text::trim_copy(raw);
            if (!tree.contains(number)) {
                warnings.push_back({"unresolved_section", "module '" + pm.module_name + "' lists unknown section " + raw});
                continue;
            }
            pm.section_numbers.push_back(number);
        }
        pm.section_numbers = sort_sections(std::move(pm.section_numbers));
        if (pm.section_numbers.empty()) {
            warnings.push_back({"empty_module", "module '" + pm.module_name + "' has no resolvable sections"});
            continue;
        }
        out.push_back(std::move(pm));
    }
    return out;
}

void merge_modules(ModuleSet& into, const std::vector<ProtocolModule>& supplement)
{
    for (const auto& m : supplement) {
        auto it = std::find_if(into.modules.begin(), into.modules.end(),
                               [&](const ProtocolModule& e) { return e.module_name == m.module_name; });
        if (it == into.modules.end()) {
            into.modules.push_back(m);
            continue;
        }
        auto merged = it->section_numbers;
        merged.insert(merged.end(), m.section_numbers.begin(), m.section_numbers.end());
        it->section_numbers = sort_sections(std::move(merged));
        if (it->description.empty())
            it->description = m.description;
    }
}

ModuleSet form_modules(const ingest::SpecTree& tree, const SummarySet& summaries, const AgentCatalog& catalog,
                       llm::Gateway& gateway, const AnalysisOptions& options)
{
    auto tmpl = llm::PromptTemplate::load("module_formation", options.data_dir);
    auto prompt = tmpl.render({{"spec_title", tree.metadata.title},
                               {"agent_catalog", catalog.describe()},
                               {"key_information", key_information(tree, summaries, tree.section_numbers())}});
    auto result = gateway.complete_structured(prompt, modules_schema(), options.max_repairs);
    ModuleSet set;
    auto parsed = parse_modules(result.value, tree, catalog, set.warnings);
    merge_modules(set, parsed);
    return set;
}

std::vector<std::string> find_uncovered(const ingest::SpecTree& tree, const ModuleSet& modules,
                                        const SummarySet* summaries, const AnalysisOptions& options)
{
    auto covered = modules.covered_sections();
    std::vector<std::string> out;
    for (auto k : tree.preorder()) {
        const auto& node = tree.nodes()[k];
        if (!node.has_content() || covered.count(node.number))
            continue;
        if (summaries && options.exempt_zero_importance_appendix) {
            const auto* s = summaries->find(node.number);
            if (s && s->classification == Classification::appendix && s->test_importance == 0)
                continue;
        }
        out.push_back(node.number);
    }
    return out;
}

ModuleSet complete_modules(const ingest::SpecTree& tree, const SummarySet& summaries, ModuleSet modules,
                           const AgentCatalog& catalog, llm::Gateway& gateway, const AnalysisOptions& options)
{
    auto tmpl = llm::PromptTemplate::load("module_completion", options.data_dir);
    modules.iteration_count = 0;
    modules.uncovered_history.clear();
    auto uncovered = find_uncovered(tree, modules, &summaries, options);
    while (!uncovered.empty() && modules.iteration_count < options.max_iterations) {
        modules.uncovered_history.push_back(uncovered.size());
        auto prompt =
            tmpl.render({{"spec_title", tree.metadata.title},
                         {"agent_catalog", catalog.describe()},
                         {"current_modules", modules_brief(modules).dump(2)},
                         {"uncovered_information", key_information(tree, summaries, uncovered)}});
        auto result = gateway.complete_structured(prompt, modules_schema(), options.max_repairs);
        auto parsed = parse_modules(result.value, tree, catalog, modules.warnings);
        merge_modules(modules, parsed);
        ++modules.iteration_count;
        uncovered = find_uncovered(tree, modules, &summaries, options);
    }
    modules.uncovered_history.push_back(uncovered.size());
    modules.uncovered_after = uncovered;
    if (!uncovered.empty())
        modules.warnings.push_back({"max_iterations_reached",
                                    "module completion stopped after " + std::to_string(modules.iteration_count) +
                                        " rounds with " + std::to_string(uncovered.size()) + " uncovered sections: " +
                                        text::join(uncovered, ", ")});
    return modules;
}

} // namespace conformgen::analysis
