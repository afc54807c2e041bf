#pragma once

#include "conformgen/error.hpp"
#include "conformgen/llm_gateway.hpp"
#include "conformgen/spec_ingest.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace conformgen::analysis {

enum class Classification { functional, descriptive, appendix, configuration };

std::string to_string(Classification c);
std::optional<Classification> classification_from_string(const std::string& s);

/// Display-only tri-level label: >= 67 high, >= 34 medium, else low.
std::string importance_label(int test_importance);

struct SectionSummary {
    std::string section_number;
    std::string summary;
    std::vector<std::string> references;
    std::vector<std::string> unresolved_references;
    Classification classification = Classification::descriptive;
    int test_importance = 0;
    bool empty_body = false;

    Json to_json() const;
    static SectionSummary from_json(const Json& j);
};

/// Summaries in traversal (pre-)order.
struct SummarySet {
    std::vector<SectionSummary> items;

    const SectionSummary* find(const std::string& number) const;
    Json to_json() const;
    static SummarySet from_json(const Json& j);
};

enum class AgentKind { packet_field, fsm, time_sequence, protocol_specific };

std::string to_string(AgentKind a);
std::optional<AgentKind> agent_from_string(const std::string& s);

struct AgentDescriptor {
    AgentKind kind;
    std::string functionality;
    std::string capabilities;
    std::string input_spec;
    std::string output_spec;
};

struct AgentCatalog {
    std::vector<AgentDescriptor> agents;

    const AgentDescriptor* find(const std::string& name) const;
    std::string describe() const;

    static AgentCatalog defaults(const std::optional<std::filesystem::path>& data_dir = {});
    static AgentCatalog from_json(const Json& j);
};

struct ProtocolModule {
    std::string module_name;
    std::string description;
    AgentKind assigned_agent = AgentKind::protocol_specific;
    std::vector<std::string> section_numbers;

    Json to_json() const;
    static ProtocolModule from_json(const Json& j);
};

struct ModuleSet {
    std::vector<ProtocolModule> modules;
    int iteration_count = 0;
    /// Content-bearing sections still outside every module.
    std::vector<std::string> uncovered_after;
    /// Uncovered set size before each completion round, then after the last.
    std::vector<std::size_t> uncovered_history;
    Warnings warnings;

    const ProtocolModule* find(const std::string& name) const;
    std::set<std::string> covered_sections() const;
    Json to_json() const;
    static ModuleSet from_json(const Json& j);
};

struct AnalysisOptions {
    int max_iterations = 10;
    /// Sections classified appendix with importance 0 need no module.
    bool exempt_zero_importance_appendix = true;
    std::optional<int> max_repairs;
    std::optional<std::filesystem::path> data_dir;
};

/// Sequential pre-order traversal. Each prompt carries the spec title, the
/// TOC and every summary produced so far. Sections with no body get a
/// synthesized descriptive/0 summary flagged empty_body without a model call.
SummarySet summarize_sections(const ingest::SpecTree& tree, llm::Gateway& gateway, const AnalysisOptions& options = {});

/// One prompt with the agent catalog, the key information of every section
/// and the output template.
ModuleSet form_modules(const ingest::SpecTree& tree, const SummarySet& summaries, const AgentCatalog& catalog,
                       llm::Gateway& gateway, const AnalysisOptions& options = {});

/// Content-bearing sections of `tree` not listed by any module, in document order.
std::vector<std::string> find_uncovered(const ingest::SpecTree& tree, const ModuleSet& modules,
                                        const SummarySet* summaries = nullptr, const AnalysisOptions& options = {});

/// Supplement rounds until nothing is uncovered or `max_iterations` rounds ran.
ModuleSet complete_modules(const ingest::SpecTree& tree, const SummarySet& summaries, ModuleSet modules,
                           const AgentCatalog& catalog, llm::Gateway& gateway, const AnalysisOptions& options = {});

/// Appends new modules; a module whose name already exists has its sections unioned.
void merge_modules(ModuleSet& into, const std::vector<ProtocolModule>& supplement);

/// Parsing helper shared by formation and completion. Throws UnknownAgent.
std::vector<ProtocolModule> parse_modules(const Json& value, const ingest::SpecTree& tree, const AgentCatalog& catalog,
                                          Warnings& warnings);

const Json& summary_schema();
const Json& modules_schema();

} // namespace conformgen::analysis
