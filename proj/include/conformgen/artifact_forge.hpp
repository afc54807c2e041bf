#pragma once

#include "conformgen/error.hpp"
#include "conformgen/fault.hpp"
#include "conformgen/llm_gateway.hpp"
#include "conformgen/testbed_sim.hpp"
#include "conformgen/testcase_engine.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace conformgen::forge {

using testbed::ExecutableArtifact;

struct TaskInfo {
    std::string task_description;
    std::string repository_structure;
    std::vector<testbed::Device> device_inventory;
};

struct ExperienceEntry {
    std::string error_signature;
    faults::FaultCategory category = faults::FaultCategory::syntax_error;
    std::string resolution;
    std::string provenance;
    int hit_count = 0;

    Json to_json() const;
    static ExperienceEntry from_json(const Json& j);
};

class ExperiencePool {
  public:
    const std::vector<ExperienceEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    /// Adds the entry, or bumps hit_count when the signature is known.
    /// Returns true when a new entry was created.
    bool record(const std::string& signature, faults::FaultCategory category, const std::string& resolution,
                const std::string& provenance);

    struct Match {
        std::size_t index;
        double similarity;
    };
    /// Best same-category entry with similarity ≥ cutoff.
    std::optional<Match> best_match(const std::string& signature, faults::FaultCategory category, double cutoff) const;

    ExperienceEntry& at(std::size_t i) { return entries_.at(i); }

    Json to_json() const;
    static ExperiencePool from_json(const Json& j);

  private:
    std::vector<ExperienceEntry> entries_;
};

struct SummaryIndexNode {
    std::string entry_id;
    std::string summary;
    std::vector<SummaryIndexNode> children;
    std::optional<std::string> payload_ref;

    bool is_leaf() const { return children.empty(); }
    Json to_json() const;
    /// Throws InvalidConfig when a leaf lacks payload_ref or an id repeats.
    static SummaryIndexNode from_json(const Json& j);
    SummaryIndexNode* find(const std::string& id);
};

struct RetrievedEntry {
    std::string entry_id;
    std::string payload_ref;
    std::string payload;
    std::vector<std::string> path;
    double score = 0.0;
    bool low_confidence = false;
};

/// Leaves ranked by their own overlap with the query plus half of their
/// ancestors'. With no overlap anywhere the root's children are returned,
/// flagged low_confidence. Throws EmptyIndex.
std::vector<RetrievedEntry> retrieve(const SummaryIndexNode& index, const std::map<std::string, std::string>& payloads,
                                     const std::string& query, std::size_t k);

struct FineGrainedIntent {
    std::vector<std::string> script_intents;
    std::vector<std::string> config_intents;
    std::vector<std::string> topology_intents;

    bool empty() const { return script_intents.empty() && config_intents.empty() && topology_intents.empty(); }
    Json to_json() const;
    static FineGrainedIntent from_json(const Json& j);
};

struct FewShotExample {
    std::string example_id;
    std::string case_title;
    std::string case_text;
    FineGrainedIntent intents;
    int uses = 0;
    int passes = 0;

    /// Laplace-smoothed pass rate.
    double score() const { return (passes + 1.0) / (uses + 2.0); }
    Json to_json() const;
    static FewShotExample from_json(const Json& j);
};

struct KnowledgeBase {
    TaskInfo task_info;
    std::vector<std::string> heuristics;
    std::vector<std::string> sops;
    ExperiencePool pool;
    SummaryIndexNode index;
    std::map<std::string, std::string> payloads;
    std::vector<FewShotExample> few_shots;

    /// sops non-empty, every leaf payload present, inventory names equal to
    /// the testbed profile's device names.
    void validate(const testbed::TestbedProfile* profile = nullptr) const;

    static KnowledgeBase load(const std::filesystem::path& dir);
    void save(const std::filesystem::path& dir) const;
    /// The knowledge base shipped with the tool.
    static KnowledgeBase defaults(const std::optional<std::filesystem::path>& data_dir = {});
};

struct FixTemplates {
    std::map<faults::FaultCategory, std::string> by_category;

    static FixTemplates defaults(const std::optional<std::filesystem::path>& data_dir = {});
    static FixTemplates from_json(const Json& j);
};

struct Correction {
    std::string fix;
    std::optional<std::size_t> matched_entry;
    std::string matched_signature;
    double similarity = 0.0;

    Json to_json() const;
};

/// Pool match (hit_count incremented) or the category's generic fix.
Correction correct(const faults::FaultReport& fault, ExperiencePool& pool, const FixTemplates& templates,
                   double cutoff = 0.8);

struct ForgeOptions {
    std::size_t retrieval_k = 3;
    double similarity_cutoff = 0.8;
    std::size_t few_shot_count = 3;
    std::size_t few_shot_cap = 10;
    std::string run_id = "run";
    std::optional<int> max_repairs;
    std::optional<std::filesystem::path> data_dir;

    static ForgeOptions from_json(const Json& j);
    Json to_json() const;
};

/// Few-shots with the best pass rate, ties in stored order.
std::vector<const FewShotExample*> select_few_shots(const std::vector<FewShotExample>& pool, std::size_t n);

/// Throws PreconditionViolation on a case without steps.
FineGrainedIntent orchestrate(const cases::TestCase& tc, const std::vector<const FewShotExample*>& few_shots,
                              llm::Gateway& gateway, const ForgeOptions& options = {});

struct RoundFeedback {
    int round = 0;
    ExecutableArtifact previous;
    testbed::ExecutionLog log;
    std::vector<faults::FaultReport> faults;
    std::vector<Correction> fixes;
};

struct Draft {
    ExecutableArtifact artifact;
    std::vector<RetrievedEntry> retrieved;
};

struct RoundRecord {
    int attempt = 0;
    int round = 0;
    ExecutableArtifact artifact;
    std::vector<faults::FaultReport> faults;
    std::vector<std::string> retrieved_refs;
    /// Fix text offered for each fault, same order.
    std::vector<std::string> fixes;
};

struct RunOutcome {
    cases::TestCase test_case;
    FineGrainedIntent intents;
    bool passed = false;
    std::vector<RoundRecord> rounds;
    std::vector<std::string> few_shot_ids;
};

struct UpdateSummary {
    int pool_added = 0;
    int pool_bumped = 0;
    int summaries_rewritten = 0;
    int few_shots_changed = 0;

    Json to_json() const;
};

/// Records multi-round fixes of a passing run, rewrites summaries of entries
/// retrieval missed, and refreshes few-shot statistics.
UpdateSummary update_subagents(KnowledgeBase& kb, const RunOutcome& outcome, const ForgeOptions& options = {});

/// The core generation agent together with its sub-agents.
class ArtifactAgent {
  public:
    ArtifactAgent(KnowledgeBase& kb, llm::Gateway& gateway, ForgeOptions options = {});

    FineGrainedIntent orchestrate(const cases::TestCase& tc);
    const std::vector<std::string>& last_few_shot_ids() const { return few_shot_ids_; }

    /// Throws SchemaViolation when the draft never validates.
    Draft draft(const cases::TestCase& tc, const FineGrainedIntent& intents, const RoundFeedback* feedback);

    Correction correct(const faults::FaultReport& fault);
    UpdateSummary finish(const RunOutcome& outcome);

    KnowledgeBase& kb() { return kb_; }
    const ForgeOptions& options() const { return options_; }

  private:
    KnowledgeBase& kb_;
    llm::Gateway& gateway_;
    ForgeOptions options_;
    FixTemplates templates_;
    std::vector<std::string> few_shot_ids_;
};

/// Runs the small loop and returns the first passing artifact. Throws
/// AttemptsExhausted when the loop escalates.
ExecutableArtifact generate(const cases::TestCase& tc, ArtifactAgent& agent, testbed::Session& session,
                            const faults::LoopConfig& loop_config);

const Json& artifact_schema();

} // namespace conformgen::forge
