#pragma once

#include "conformgen/artifact_forge.hpp"
#include "conformgen/data.hpp"
#include "conformgen/fault.hpp"
#include "conformgen/llm_gateway.hpp"
#include "conformgen/testcase_engine.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace conformgen::pipeline {

/// Stage names in execution order.
const std::vector<std::string>& stage_names();

/// Maps CLI aliases ("gen-cases") to stage names. Throws InvalidConfig.
std::string canonical_stage(const std::string& name);

struct RunConfig {
    std::string run_id = "run";
    std::optional<std::filesystem::path> spec_path;
    std::filesystem::path run_dir = "runs/latest";
    /// Empty selects every stage.
    std::vector<std::string> stages;
    llm::BackendDescriptor backend;
    int max_repairs = 3;
    int max_iterations = 10;
    bool exempt_zero_importance_appendix = true;
    bool strict_states = false;
    cases::CoverageConfig coverage;
    forge::ForgeOptions forge;
    faults::LoopConfig loop;
    std::optional<std::filesystem::path> kb_path;
    std::optional<std::filesystem::path> testbed_profile;
    std::optional<std::filesystem::path> fault_profile;
    std::optional<std::filesystem::path> answers_dir;
    std::optional<std::filesystem::path> data_dir;

    /// The shipped defaults overlaid with `j`; relative paths resolve
    /// against `base_dir`.
    static RunConfig from_json(const Json& j, const std::filesystem::path& base_dir = ".");
    static RunConfig load(const std::filesystem::path& path);
    static RunConfig defaults();
    Json to_json() const;

    /// Referenced paths exist and stage names are known.
    void validate() const;
    std::vector<std::string> selected_stages() const;
};

enum class StageStatus { pending, done, failed };

std::string to_string(StageStatus s);

struct StageRecord {
    std::string name;
    StageStatus status = StageStatus::pending;
    double duration_ms = 0.0;
    /// Checksum over the configuration and the predecessors' artifacts.
    std::string input_checksum;
    /// Relative path → SHA-256 of every emitted file.
    std::map<std::string, std::string> artifacts;
    std::string error;
};

struct RunManifest {
    std::string run_id;
    std::vector<StageRecord> stages;

    StageRecord* find(const std::string& name);
    const StageRecord* find(const std::string& name) const;
    Json to_json() const;
    static RunManifest from_json(const Json& j);
    /// Throws ManifestMissing.
    static RunManifest load(const std::filesystem::path& run_dir);
    void save(const std::filesystem::path& run_dir) const;
};

/// True when every recorded artifact exists with the recorded checksum.
bool verify_artifacts(const std::filesystem::path& run_dir, const StageRecord& record);

struct StageEvent {
    std::string stage;
    std::string action; // run, skip, done, failed
    std::string detail;
};

using ProgressFn = std::function<void(const StageEvent&)>;

/// Executes the selected stages in order. A stage whose inputs are unchanged
/// and whose artifacts verify is skipped. Throws StageFailed and
/// MissingPredecessorArtifact. `backend` replaces the configured one.
RunManifest run(const RunConfig& config, std::shared_ptr<llm::CompletionBackend> backend = nullptr,
                const ProgressFn& progress = {});

/// Human-readable summary with module/point/case counts, coverage, loop
/// outcomes and metric tables. Throws ManifestMissing.
std::string report(const std::filesystem::path& run_dir);

/// Scores answer/output file pairs (<name>.config, <name>.script) without a
/// pipeline run. Verdicts map names to review outcomes.
Json score_directories(const std::filesystem::path& answers, const std::filesystem::path& outputs,
                       const std::optional<std::filesystem::path>& verdicts = std::nullopt);

/// Writes a metrics-only run directory from score_directories output.
RunManifest write_metrics_run(const std::filesystem::path& run_dir, const Json& metrics, const std::string& run_id = "metrics");

} // namespace conformgen::pipeline
