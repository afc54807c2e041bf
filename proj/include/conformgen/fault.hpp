#pragma once

#include "conformgen/data.hpp"
#include "conformgen/testbed_sim.hpp"

#include <optional>
#include <regex>
#include <string>
#include <vector>

namespace conformgen::faults {

enum class FaultCategory { syntax_error, configuration_mismatch, unsupported_command, assertion_failure, environment };

std::string to_string(FaultCategory c);
std::optional<FaultCategory> category_from_string(const std::string& s);

struct FaultReport {
    FaultCategory category = FaultCategory::syntax_error;
    std::string evidence;
    std::vector<std::size_t> source_events;
    /// The offending config line or call.
    std::string subject;
    /// Normalized error signature used for experience-pool matching.
    std::string signature;

    Json to_json() const;
    static FaultReport from_json(const Json& j);
};

struct ClassificationRule {
    testbed::EventKind kind;
    std::string pattern;
    std::regex compiled;
    FaultCategory category;
};

/// First matching rule wins; events no rule matches fall back by kind.
class ClassificationRules {
  public:
    static ClassificationRules from_json(const Json& j);
    static const ClassificationRules& defaults();

    FaultCategory categorize(const testbed::Event& e) const;
    const std::vector<ClassificationRule>& rules() const { return rules_; }

  private:
    std::vector<ClassificationRule> rules_;
};

/// One report per failure event, in log order.
std::vector<FaultReport> classify(const testbed::ExecutionLog& log,
                                  const ClassificationRules& rules = ClassificationRules::defaults());

/// Lowercase, addresses to <addr>, digit runs to <n>, whitespace collapsed.
std::string normalize_signature(const std::string& text);

/// Multiset token overlap divided by the longer token count; 1 when both empty.
double signature_similarity(const std::string& a, const std::string& b);

struct LoopConfig {
    int max_rounds_per_attempt = 10;
    int max_attempts = 3;
    /// Regeneration passes the large loop tries before manual review.
    int max_regenerations = 1;

    void validate() const;
    static LoopConfig from_json(const Json& j);
    Json to_json() const;
};

} // namespace conformgen::faults
