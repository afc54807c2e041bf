#pragma once

#include "conformgen/error.hpp"
#include "conformgen/high_level_analysis.hpp"
#include "conformgen/llm_gateway.hpp"
#include "conformgen/low_level_modeling.hpp"
#include "conformgen/spec_ingest.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace conformgen::cases {

struct TestCase {
    std::string case_id;
    std::string title;
    std::string objective;
    std::vector<std::string> steps;
    std::vector<std::string> expected_results;
    std::vector<std::string> reference_sections;
    std::string topology;
    Json parameters = Json::object();
    /// Testing point the case came from; empty for refinement cases.
    std::string point_id;
    std::string module_name;
    /// generation, supplement, depth or regeneration.
    std::string provenance = "generation";

    Json to_json() const;
    static TestCase from_json(const Json& j);
};

std::vector<TestCase> read_cases(const std::filesystem::path& jsonl);
void write_cases(const std::filesystem::path& jsonl, const std::vector<TestCase>& cases);

struct CoverageConfig {
    std::map<analysis::Classification, double> weight_map;
    double threshold = 50.0;
    int max_refinement_rounds = 1;
    double basic_target = 90.0;
    double boundary_target = 78.0;

    void validate() const;
    double weight(analysis::Classification c) const;

    static CoverageConfig from_json(const Json& j);
    Json to_json() const;
    /// functional 1.0, configuration 0.8, descriptive 0.4, appendix 0.2, θ 50.
    static CoverageConfig defaults();
};

struct KeySection {
    std::string section;
    double score = 0.0;
};

struct BreadthReport {
    std::vector<KeySection> key_sections;
    std::vector<std::string> covered;
    std::vector<std::string> uncovered;
    double coverage_rate = 0.0;
    /// The key set was empty, so the rate is reported as 0.
    bool empty_key_set = false;

    Json to_json() const;
    static BreadthReport from_json(const Json& j);
};

struct DepthEntry {
    std::string section;
    double basic_function_score = 0.0;
    double boundary_case_score = 0.0;
    std::string rationale;
    std::vector<std::string> suggestions;
    std::size_t case_count = 0;

    Json to_json() const;
    static DepthEntry from_json(const Json& j);
};

struct DepthReport {
    std::vector<DepthEntry> entries;

    const DepthEntry* find(const std::string& section) const;
    double mean_basic() const;
    double mean_boundary() const;
    Json to_json() const;
    static DepthReport from_json(const Json& j);
};

/// score = test_importance × w(classification). Throws UnknownClassification.
double compute_score(const analysis::SectionSummary& summary, const CoverageConfig& config);

/// Sections with score ≥ θ, in summary (document) order.
std::vector<KeySection> select_key_sections(const analysis::SummarySet& summaries, const CoverageConfig& config);

struct GenerationContext {
    std::string spec_title;
    std::string protocol_summary;
    std::string module_name;
    std::string module_description;
    /// One line per relevant section.
    std::string section_summaries;
};

GenerationContext build_context(const modeling::TestingPoint& point, const ingest::SpecTree& tree,
                                const analysis::SummarySet& summaries, const analysis::ModuleSet& modules);

/// Few-shot reference cases shipped with the tool.
std::vector<TestCase> default_examples(const std::optional<std::filesystem::path>& data_dir = {});

struct EngineOptions {
    std::optional<int> max_repairs;
    std::optional<std::filesystem::path> data_dir;
};

/// Throws PreconditionViolation before prompting when the point lacks an
/// objective or reference sections. Point sections dropped by the model are
/// restored with a reference_drift warning.
TestCase generate_case(const modeling::TestingPoint& point, const GenerationContext& context,
                       const std::vector<TestCase>& examples, llm::Gateway& gateway, const ingest::SpecTree& tree,
                       Warnings& warnings, const EngineOptions& options = {});

/// Deterministic id for the case generated from `point_id`.
std::string case_id_for_point(const std::string& point_id);

/// A key section is covered when at least one case lists it.
BreadthReport compute_breadth(const std::vector<TestCase>& cases, const std::vector<KeySection>& key_sections);

/// Cases per referenced section; a case counts in every section it lists.
std::map<std::string, std::vector<const TestCase*>> group_by_section(const std::vector<TestCase>& cases);

/// Zero cases give 0/0 with a "no coverage" suggestion and no model call.
DepthEntry judge_depth(const ingest::SectionNode& section, const std::vector<const TestCase*>& cases,
                       llm::Gateway& gateway, const EngineOptions& options = {});

DepthReport judge_all(const ingest::SpecTree& tree, const std::vector<KeySection>& key_sections,
                      const std::vector<TestCase>& cases, llm::Gateway& gateway, const EngineOptions& options = {});

struct RefinementResult {
    std::vector<TestCase> new_cases;
    int rounds = 0;
    BreadthReport final_breadth;
    DepthReport final_depth;
    std::vector<double> breadth_history;
    std::vector<double> boundary_history;
};

/// Supplements uncovered key sections first, then asks for depth cases where
/// a section misses the targets. Re-verifies after each round.
RefinementResult refine(const ingest::SpecTree& tree, const analysis::SummarySet& summaries,
                        const std::vector<KeySection>& key_sections, const std::vector<TestCase>& cases,
                        const BreadthReport& breadth, const DepthReport& depth, const CoverageConfig& config,
                        llm::Gateway& gateway, Warnings& warnings, const EngineOptions& options = {});

/// Breadth of an externally supplied suite under the same key-section rule.
BreadthReport score_external_suite(const std::vector<TestCase>& suite, const analysis::SummarySet& summaries,
                                   const CoverageConfig& config);

/// Rewrites a case given a summary of how it failed on the testbed.
TestCase regenerate_case(const TestCase& original, const std::string& failure_summary, const ingest::SpecTree& tree,
                         llm::Gateway& gateway, Warnings& warnings, const EngineOptions& options = {});

const Json& case_schema();

} // namespace conformgen::cases
