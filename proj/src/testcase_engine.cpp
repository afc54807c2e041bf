#include "conformgen/testcase_engine.hpp"

#include "conformgen/text.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace conformgen::cases {

namespace {

std::vector<std::string> str_list(const Json& j, const char* key)
{
    std::vector<std::string> out;
    if (j.contains(key) && j.at(key).is_array())
        for (const auto& e : j.at(key))
            if (e.is_string())
                out.push_back(e.get<std::string>());
    return out;
}

void sort_sections(std::vector<std::string>& v)
{
    std::sort(v.begin(), v.end(), [](const std::string& a, const std::string& b) { return text::section_less(a, b); });
    v.erase(std::unique(v.begin(), v.end()), v.end());
}

const Json& case_list_schema()
{
    static const Json s = [] {
        Json j = {{"type", "object"},
                  {"required", {"cases"}},
                  {"properties", {{"cases", {{"type", "array"}, {"minItems", 1}, {"items", case_schema()}}}}}};
        return j;
    }();
    return s;
}

const Json& depth_schema()
{
    static const Json s = Json::parse(R"({
        "type": "object",
        "required": ["basic_function_score", "boundary_case_score", "rationale", "suggestions"],
        "properties": {
            "basic_function_score": {"type": "number", "minimum": 0, "maximum": 100},
            "boundary_case_score": {"type": "number", "minimum": 0, "maximum": 100},
            "rationale": {"type": "string"},
            "suggestions": {"type": "array", "items": {"type": "string"}}
        }
    })");
    return s;
}

/// Builds a case from model output, resolving sections against `tree` and
/// restoring any of `required` the model left out.
TestCase parse_case(const Json& v, const ingest::SpecTree& tree, const std::vector<std::string>& required,
                    Warnings& warnings)
{
    TestCase c;
    c.title = v.at("title").get<std::string>();
    c.objective = v.value("objective", "");
    c.steps = str_list(v, "steps");
    c.expected_results = str_list(v, "expected_results");
    c.topology = v.value("topology", "");
    c.parameters = v.value("parameters", Json::object());
    for (const auto& r : str_list(v, "reference_sections")) {
        auto canon = ingest::canonical_section_number(r);
        auto n = canon ? *canon : text::trim_copy(r);
        if (!tree.contains(n)) {
            warnings.push_back({"unresolved_section", "case '" + c.title + "' cites unknown section " + r});
            continue;
        }
        c.reference_sections.push_back(n);
    }
    std::vector<std::string> missing;
    for (const auto& r : required)
        if (std::find(c.reference_sections.begin(), c.reference_sections.end(), r) == c.reference_sections.end())
            missing.push_back(r);
    if (!missing.empty()) {
        warnings.push_back({"reference_drift", "case '" + c.title + "' dropped sections " + text::join(missing, ", ") +
                                                   "; restored"});
        c.reference_sections.insert(c.reference_sections.end(), missing.begin(), missing.end());
    }
    sort_sections(c.reference_sections);
    return c;
}

std::string case_brief(const TestCase& c)
{
    return "- [" + c.case_id + "] " + c.title + ": " + c.objective + "\n  steps: " + text::join(c.steps, "; ") +
           "\n  expected: " + text::join(c.expected_results, "; ");
}

std::string format_examples(const std::vector<TestCase>& examples)
{
    if (examples.empty())
        return "(none)";
    std::vector<std::string> parts;
    for (const auto& e : examples) {
        auto j = e.to_json();
        for (const char* k : {"case_id", "point_id", "module_name", "provenance"})
            j.erase(k);
        parts.push_back(j.dump(2));
    }
    return text::join(parts, "\n");
}

bool meets(const DepthEntry& e, const CoverageConfig& c)
{
    return e.basic_function_score >= c.basic_target && e.boundary_case_score >= c.boundary_target;
}

std::string summary_text(const analysis::SummarySet& summaries, const std::string& section)
{
    const auto* s = summaries.find(section);
    return s ? s->summary : std::string("(no summary)");
}

std::vector<TestCase> section_cases(const Json& value, const ingest::SpecTree& tree, const std::string& section,
                                    const std::string& provenance, const std::string& id_prefix,
                                    std::set<std::string>& used_ids, Warnings& warnings)
{
    std::vector<TestCase> out;
    int k = 0;
    for (const auto& v : value.at("cases")) {
        auto c = parse_case(v, tree, {section}, warnings);
        c.provenance = provenance;
        std::string id;
        do {
            id = id_prefix + "-" + section + "-" + std::to_string(++k);
        } while (used_ids.count(id));
        used_ids.insert(id);
        c.case_id = id;
        out.push_back(std::move(c));
    }
    return out;
}

} // namespace

// ---------------------------------------------------------------------------

Json TestCase::to_json() const
{
    return {{"case_id", case_id},
            {"title", title},
            {"objective", objective},
            {"steps", steps},
            {"expected_results", expected_results},
            {"reference_sections", reference_sections},
            {"topology", topology},
            {"parameters", parameters},
            {"point_id", point_id},
            {"module_name", module_name},
            {"provenance", provenance}};
}

TestCase TestCase::from_json(const Json& j)
{
    TestCase c;
    c.case_id = j.value("case_id", "");
    c.title = j.at("title").get<std::string>();
    c.objective = j.value("objective", "");
    c.steps = str_list(j, "steps");
    c.expected_results = str_list(j, "expected_results");
    c.reference_sections = str_list(j, "reference_sections");
    c.topology = j.value("topology", "");
    c.parameters = j.value("parameters", Json::object());
    c.point_id = j.value("point_id", "");
    c.module_name = j.value("module_name", "");
    c.provenance = j.value("provenance", "generation");
    return c;
}

std::vector<TestCase> read_cases(const std::filesystem::path& jsonl)
{
    std::vector<TestCase> out;
    for (const auto& j : io::read_jsonl(jsonl))
        out.push_back(TestCase::from_json(j));
    return out;
}

void write_cases(const std::filesystem::path& jsonl, const std::vector<TestCase>& cases)
{
    std::vector<Json> rows;
    for (const auto& c : cases)
        rows.push_back(c.to_json());
    io::write_jsonl(jsonl, rows);
}

// ---------------------------------------------------------------------------

void CoverageConfig::validate() const
{
    for (const auto& [c, w] : weight_map)
        if (!(w >= 0.0 && w <= 1.0))
            throw Error(ErrorKind::InvalidConfig, analysis::to_string(c), "weight must lie in [0,1]");
    if (!(threshold >= 0.0))
        throw Error(ErrorKind::InvalidConfig, "threshold", "threshold must be non-negative");
    if (max_refinement_rounds < 0)
        throw Error(ErrorKind::InvalidConfig, "max_refinement_rounds", "must be non-negative");
}

double CoverageConfig::weight(analysis::Classification c) const
{
    auto it = weight_map.find(c);
    if (it == weight_map.end())
        throw Error(ErrorKind::UnknownClassification, analysis::to_string(c),
                    "no weight configured for classification " + analysis::to_string(c));
    return it->second;
}

CoverageConfig CoverageConfig::from_json(const Json& j)
{
    CoverageConfig c;
    for (const auto& [k, v] : j.at("weight_map").items()) {
        auto cls = analysis::classification_from_string(k);
        if (!cls)
            throw Error(ErrorKind::UnknownClassification, k, "unknown classification in weight_map");
        c.weight_map[*cls] = v.get<double>();
    }
    c.threshold = j.value("threshold", 50.0);
    c.max_refinement_rounds = j.value("max_refinement_rounds", 1);
    c.basic_target = j.value("basic_target", 90.0);
    c.boundary_target = j.value("boundary_target", 78.0);
    c.validate();
    return c;
}

Json CoverageConfig::to_json() const
{
    Json w = Json::object();
    for (const auto& [c, v] : weight_map)
        w[analysis::to_string(c)] = v;
    return {{"weight_map", w},
            {"threshold", threshold},
            {"max_refinement_rounds", max_refinement_rounds},
            {"basic_target", basic_target},
            {"boundary_target", boundary_target}};
}

CoverageConfig CoverageConfig::defaults()
{
    return from_json(load_json_data("config/default_config.json").at("coverage"));
}

Json BreadthReport::to_json() const
{
    Json keys = Json::array();
    for (const auto& k : key_sections)
        keys.push_back({{"section", k.section}, {"score", k.score}});
    return {{"key_sections", keys},
            {"covered", covered},
            {"uncovered", uncovered},
            {"coverage_rate", coverage_rate},
            {"empty_key_set", empty_key_set}};
}

BreadthReport BreadthReport::from_json(const Json& j)
{
    BreadthReport b;
    for (const auto& k : j.at("key_sections"))
        b.key_sections.push_back({k.at("section").get<std::string>(), k.at("score").get<double>()});
    b.covered = j.value("covered", std::vector<std::string>{});
    b.uncovered = j.value("uncovered", std::vector<std::string>{});
    b.coverage_rate = j.value("coverage_rate", 0.0);
    b.empty_key_set = j.value("empty_key_set", false);
    return b;
}

Json DepthEntry::to_json() const
{
    return {{"section", section},
            {"basic_function_score", basic_function_score},
            {"boundary_case_score", boundary_case_score},
            {"rationale", rationale},
            {"suggestions", suggestions},
            {"case_count", case_count}};
}

DepthEntry DepthEntry::from_json(const Json& j)
{
    DepthEntry e;
    e.section = j.at("section").get<std::string>();
    e.basic_function_score = j.value("basic_function_score", 0.0);
    e.boundary_case_score = j.value("boundary_case_score", 0.0);
    e.rationale = j.value("rationale", "");
    e.suggestions = str_list(j, "suggestions");
    e.case_count = j.value("case_count", std::size_t{0});
    return e;
}

const DepthEntry* DepthReport::find(const std::string& section) const
{
    auto it = std::find_if(entries.begin(), entries.end(), [&](const DepthEntry& e) { return e.section == section; });
    return it == entries.end() ? nullptr : &*it;
}

double DepthReport::mean_basic() const
{
    if (entries.empty())
        return 0.0;
    double s = 0;
    for (const auto& e : entries)
        s += e.basic_function_score;
    return s / static_cast<double>(entries.size());
}

double DepthReport::mean_boundary() const
{
    if (entries.empty())
        return 0.0;
    double s = 0;
    for (const auto& e : entries)
        s += e.boundary_case_score;
    return s / static_cast<double>(entries.size());
}

Json DepthReport::to_json() const
{
    Json arr = Json::array();
    for (const auto& e : entries)
        arr.push_back(e.to_json());
    return {{"entries", arr}, {"mean_basic", mean_basic()}, {"mean_boundary", mean_boundary()}};
}

DepthReport DepthReport::from_json(const Json& j)
{
    DepthReport r;
    for (const auto& e : j.at("entries"))
        r.entries.push_back(DepthEntry::from_json(e));
    return r;
}

const Json& case_schema()
{
    static const Json s = Json::parse(R"({
        "type": "object",
        "required": ["title", "objective", "steps", "expected_results", "reference_sections", "topology"],
        "properties": {
            "title": {"type": "string", "minLength": 1},
            "objective": {"type": "string", "minLength": 1},
            "steps": {"type": "array", "minItems": 1, "items": {"type": "string", "minLength": 1}},
            "expected_results": {"type": "array", "minItems": 1, "items": {"type": "string", "minLength": 1}},
            "reference_sections": {"type": "array", "minItems": 1, "items": {"type": "string"}},
            "topology": {"type": "string"},
            "parameters": {"type": "object"}
        }
    })");
    return s;
}

// ---------------------------------------------------------------------------

double compute_score(const analysis::SectionSummary& summary, const CoverageConfig& config)
{
    return static_cast<double>(summary.test_importance) * config.weight(summary.classification);
}

std::vector<KeySection> select_key_sections(const analysis::SummarySet& summaries, const CoverageConfig& config)
{
    std::vector<KeySection> out;
    for (const auto& s : summaries.items) {
        auto score = compute_score(s, config);
        if (score >= config.threshold)
            out.push_back({s.section_number, score});
    }
    return out;
}

GenerationContext build_context(const modeling::TestingPoint& point, const ingest::SpecTree& tree,
                                const analysis::SummarySet& summaries, const analysis::ModuleSet& modules)
{
    GenerationContext ctx;
    ctx.spec_title = tree.metadata.title;
    ctx.protocol_summary = tree.metadata.abstract.empty() ? tree.metadata.title : tree.metadata.abstract;
    ctx.module_name = point.module_name;
    if (const auto* m = modules.find(point.module_name))
        ctx.module_description = m->description;
    std::vector<std::string> lines;
    for (const auto& r : point.reference_sections) {
        const auto* node = tree.find(r);
        lines.push_back("- " + r + " " + (node ? node->title : std::string{}) + ": " + summary_text(summaries, r));
    }
    ctx.section_summaries = lines.empty() ? "(none)" : text::join(lines, "\n");
    return ctx;
}

std::vector<TestCase> default_examples(const std::optional<std::filesystem::path>& data_dir)
{
    std::vector<TestCase> out;
    auto doc = load_json_data("config/reference_cases.json", data_dir);
    for (const auto& c : doc.at("cases"))
        out.push_back(TestCase::from_json(c));
    return out;
}

std::string case_id_for_point(const std::string& point_id) { return "TC-" + point_id; }

TestCase generate_case(const modeling::TestingPoint& point, const GenerationContext& context,
                       const std::vector<TestCase>& examples, llm::Gateway& gateway, const ingest::SpecTree& tree,
                       Warnings& warnings, const EngineOptions& options)
{
    if (text::is_blank(point.objective))
        throw Error(ErrorKind::PreconditionViolation, point.point_id, "testing point has an empty objective");
    if (point.reference_sections.empty())
        throw Error(ErrorKind::PreconditionViolation, point.point_id, "testing point has no reference sections");
    auto tmpl = llm::PromptTemplate::load("test_case_generation", options.data_dir);
    Json tp = {{"title", point.title},
               {"objective", point.objective},
               {"parameters", point.parameters},
               {"reference_sections", point.reference_sections},
               {"origin", modeling::to_string(point.origin)}};
    if (!point.additional_tools_required.empty())
        tp["additional_tools_required"] = point.additional_tools_required;
    auto prompt = tmpl.render({{"spec_title", context.spec_title},
                               {"protocol_summary", context.protocol_summary},
                               {"module_name", context.module_name},
                               {"module_description", context.module_description},
                               {"section_summaries", context.section_summaries},
                               {"examples", format_examples(examples)},
                               {"testing_point", tp.dump(2)}});
    auto result = gateway.complete_structured(prompt, case_schema(), options.max_repairs);
    auto c = parse_case(result.value, tree, point.reference_sections, warnings);
    c.case_id = case_id_for_point(point.point_id);
    c.point_id = point.point_id;
    c.module_name = point.module_name;
    c.provenance = "generation";
    return c;
}

BreadthReport compute_breadth(const std::vector<TestCase>& cases, const std::vector<KeySection>& key_sections)
{
    std::set<std::string> referenced;
    for (const auto& c : cases)
        referenced.insert(c.reference_sections.begin(), c.reference_sections.end());
    BreadthReport r;
    r.key_sections = key_sections;
    for (const auto& k : key_sections)
        (referenced.count(k.section) ? r.covered : r.uncovered).push_back(k.section);
    if (key_sections.empty()) {
        r.empty_key_set = true;
        r.coverage_rate = 0.0;
    } else {
        r.coverage_rate = static_cast<double>(r.covered.size()) / static_cast<double>(key_sections.size());
    }
    return r;
}

std::map<std::string, std::vector<const TestCase*>> group_by_section(const std::vector<TestCase>& cases)
{
    std::map<std::string, std::vector<const TestCase*>> out;
    for (const auto& c : cases) {
        std::set<std::string> seen;
        for (const auto& r : c.reference_sections)
            if (seen.insert(r).second)
                out[r].push_back(&c);
    }
    return out;
}

DepthEntry judge_depth(const ingest::SectionNode& section, const std::vector<const TestCase*>& cases,
                       llm::Gateway& gateway, const EngineOptions& options)
{
    DepthEntry e;
    e.section = section.number;
    e.case_count = cases.size();
    if (cases.empty()) {
        e.rationale = "No test case references this section.";
        e.suggestions = {"no coverage"};
        return e;
    }
    auto tmpl = llm::PromptTemplate::load("depth_judge", options.data_dir);
    std::vector<std::string> briefs;
    for (const auto* c : cases)
        briefs.push_back(case_brief(*c));
    auto prompt = tmpl.render({{"section_number", section.number},
                               {"section_title", section.title},
                               {"section_content", section.content},
                               {"case_count", std::to_string(cases.size())},
                               {"cases", text::join(briefs, "\n")}});
    llm::StructuredResult result;
    try {
        result = gateway.complete_structured(prompt, depth_schema(), options.max_repairs);
    } catch (const Error& err) {
        if (err.kind() == ErrorKind::SchemaViolation)
            throw Error(ErrorKind::SchemaViolation, section.number, "depth of section " + section.number + ": " + err.what());
        throw;
    }
    e.basic_function_score = result.value.at("basic_function_score").get<double>();
    e.boundary_case_score = result.value.at("boundary_case_score").get<double>();
    e.rationale = result.value.at("rationale").get<std::string>();
    e.suggestions = str_list(result.value, "suggestions");
    return e;
}

DepthReport judge_all(const ingest::SpecTree& tree, const std::vector<KeySection>& key_sections,
                      const std::vector<TestCase>& cases, llm::Gateway& gateway, const EngineOptions& options)
{
    auto groups = group_by_section(cases);
    DepthReport r;
    for (const auto& k : key_sections) {
        auto it = groups.find(k.section);
        static const std::vector<const TestCase*> none;
        r.entries.push_back(judge_depth(tree.at(k.section), it == groups.end() ? none : it->second, gateway, options));
    }
    return r;
}

RefinementResult refine(const ingest::SpecTree& tree, const analysis::SummarySet& summaries,
                        const std::vector<KeySection>& key_sections, const std::vector<TestCase>& cases,
                        const BreadthReport& breadth, const DepthReport& depth, const CoverageConfig& config,
                        llm::Gateway& gateway, Warnings& warnings, const EngineOptions& options)
{
    auto supplement_t = llm::PromptTemplate::load("supplement_cases", options.data_dir);
    auto improve_t = llm::PromptTemplate::load("depth_improvement", options.data_dir);

    RefinementResult res;
    res.final_breadth = breadth;
    res.final_depth = depth;
    res.breadth_history.push_back(breadth.coverage_rate);
    res.boundary_history.push_back(depth.mean_boundary());

    std::vector<TestCase> all = cases;
    std::set<std::string> used_ids;
    for (const auto& c : all)
        used_ids.insert(c.case_id);

    for (int round = 1; round <= config.max_refinement_rounds; ++round) {
        bool depth_ok = std::all_of(res.final_depth.entries.begin(), res.final_depth.entries.end(),
                                    [&](const DepthEntry& e) { return meets(e, config); });
        if (res.final_breadth.uncovered.empty() && depth_ok)
            break;
        res.rounds = round;
        std::set<std::string> touched;
        std::vector<TestCase> fresh;

        for (const auto& section : res.final_breadth.uncovered) {
            const auto& node = tree.at(section);
            auto prompt = supplement_t.render({{"spec_title", tree.metadata.title},
                                               {"section_number", section},
                                               {"section_title", node.title},
                                               {"section_summary", summary_text(summaries, section)},
                                               {"section_content", node.content}});
            auto v = gateway.complete_structured(prompt, case_list_schema(), options.max_repairs).value;
            auto made = section_cases(v, tree, section, "supplement", "TC-S" + std::to_string(round), used_ids, warnings);
            fresh.insert(fresh.end(), made.begin(), made.end());
            touched.insert(section);
        }

        auto groups = group_by_section(all);
        for (const auto& e : res.final_depth.entries) {
            if (touched.count(e.section) || e.case_count == 0 || meets(e, config))
                continue;
            const auto& node = tree.at(e.section);
            std::vector<std::string> briefs;
            for (const auto* c : groups[e.section])
                briefs.push_back(case_brief(*c));
            std::vector<std::string> sugg;
            for (const auto& s : e.suggestions)
                sugg.push_back("- " + s);
            auto prompt = improve_t.render({{"spec_title", tree.metadata.title},
                                            {"section_number", e.section},
                                            {"section_title", node.title},
                                            {"section_content", node.content},
                                            {"basic_score", text::format_number(e.basic_function_score)},
                                            {"boundary_score", text::format_number(e.boundary_case_score)},
                                            {"existing_cases", text::join(briefs, "\n")},
                                            {"suggestions", sugg.empty() ? "(none)" : text::join(sugg, "\n")}});
            auto v = gateway.complete_structured(prompt, case_list_schema(), options.max_repairs).value;
            auto made = section_cases(v, tree, e.section, "depth", "TC-D" + std::to_string(round), used_ids, warnings);
            fresh.insert(fresh.end(), made.begin(), made.end());
            touched.insert(e.section);
        }

        for (const auto& c : fresh)
            touched.insert(c.reference_sections.begin(), c.reference_sections.end());
        all.insert(all.end(), fresh.begin(), fresh.end());
        res.new_cases.insert(res.new_cases.end(), fresh.begin(), fresh.end());

        res.final_breadth = compute_breadth(all, key_sections);
        groups = group_by_section(all);
        DepthReport next;
        for (const auto& k : key_sections) {
            const auto* prev = res.final_depth.find(k.section);
            if (prev && !touched.count(k.section)) {
                next.entries.push_back(*prev);
                continue;
            }
            static const std::vector<const TestCase*> none;
            auto it = groups.find(k.section);
            next.entries.push_back(judge_depth(tree.at(k.section), it == groups.end() ? none : it->second, gateway, options));
        }
        res.final_depth = std::move(next);
        res.breadth_history.push_back(res.final_breadth.coverage_rate);
        res.boundary_history.push_back(res.final_depth.mean_boundary());
    }
    return res;
}

BreadthReport score_external_suite(const std::vector<TestCase>& suite, const analysis::SummarySet& summaries,
                                   const CoverageConfig& config)
{
    return compute_breadth(suite, select_key_sections(summaries, config));
}

TestCase regenerate_case(const TestCase& original, const std::string& failure_summary, const ingest::SpecTree& tree,
                         llm::Gateway& gateway, Warnings& warnings, const EngineOptions& options)
{
    auto tmpl = llm::PromptTemplate::load("case_regeneration", options.data_dir);
    std::vector<std::string> blocks;
    for (const auto& r : original.reference_sections)
        if (const auto* node = tree.find(r))
            blocks.push_back("<section number=\"" + r + "\" title=\"" + node->title + "\">\n" + node->content + "\n</section>");
    auto j = original.to_json();
    for (const char* k : {"point_id", "module_name", "provenance"})
        j.erase(k);
    auto prompt = tmpl.render({{"spec_title", tree.metadata.title},
                               {"original_case", j.dump(2)},
                               {"failure_summary", failure_summary},
                               {"section_content", blocks.empty() ? "(none)" : text::join(blocks, "\n")}});
    auto result = gateway.complete_structured(prompt, case_schema(), options.max_repairs);
    auto c = parse_case(result.value, tree, original.reference_sections, warnings);
    c.case_id = original.case_id + "-regen";
    c.point_id = original.point_id;
    c.module_name = original.module_name;
    c.provenance = "regeneration";
    return c;
}

} // namespace conformgen::cases
