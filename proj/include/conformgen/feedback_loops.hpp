#pragma once

#include "conformgen/artifact_forge.hpp"
#include "conformgen/fault.hpp"
#include "conformgen/testbed_sim.hpp"
#include "conformgen/testcase_engine.hpp"

#include <functional>
#include <string>
#include <variant>
#include <vector>

namespace conformgen::loops {

using faults::FaultReport;
using faults::LoopConfig;

enum class SuspectedOrigin { dut_defect_or_docs, tester_limitation, test_case_flaw };
enum class Disposition { regenerate_case, manual_review };

std::string to_string(SuspectedOrigin o);
std::string to_string(Disposition d);

struct AttemptRecord {
    int attempt = 0;
    int rounds = 0;
    /// Fault reports of every round, in order.
    std::vector<std::vector<FaultReport>> round_faults;

    const std::vector<FaultReport>& final_faults() const;
    Json to_json() const;
};

struct EscalationTicket {
    std::string case_id;
    SuspectedOrigin suspected_origin = SuspectedOrigin::test_case_flaw;
    std::vector<AttemptRecord> history;
    Disposition disposition = Disposition::regenerate_case;
    int regeneration_attempts = 0;

    Json to_json() const;
};

struct Pass {
    forge::ExecutableArtifact artifact;
    int rounds = 0;
    int attempt = 0;
    std::size_t executions = 0;
};

using SmallLoopResult = std::variant<Pass, EscalationTicket>;

struct LoopTrace {
    std::string case_id;
    std::vector<Json> rounds;
    Json outcome;

    Json to_json() const;
};

/// Ordered origin rules, loaded from loops/origin_rules.json.
struct OriginRules {
    struct Rule {
        faults::FaultCategory category;
        std::string scope; // final_round, every_attempt, clean_deployment
        SuspectedOrigin origin;
    };
    std::vector<Rule> rules;
    SuspectedOrigin fallback = SuspectedOrigin::test_case_flaw;

    static OriginRules from_json(const Json& j);
    static const OriginRules& defaults();
};

SuspectedOrigin suspect_origin(const std::vector<AttemptRecord>& history,
                               const OriginRules& rules = OriginRules::defaults());

/// Passing means no failure event and at least one passing assertion.
bool passes(const testbed::ExecutionLog& log);

/// Rounds of draft → deploy → execute → classify → correct. A new attempt
/// drops the conversation context but keeps the experience pool.
SmallLoopResult run_small_loop(const cases::TestCase& tc, forge::ArtifactAgent& agent, testbed::Session& session,
                               const LoopConfig& config, LoopTrace* trace = nullptr);

struct Resolved {
    std::vector<cases::TestCase> new_cases;
    std::vector<Pass> passes;
    EscalationTicket ticket;
};

struct ManualReview {
    EscalationTicket ticket;
    std::vector<cases::TestCase> tried;
};

using EscalationResult = std::variant<Resolved, ManualReview>;
using Regenerator = std::function<cases::TestCase(const cases::TestCase&, const std::string& failure_summary)>;
using LoopRunner = std::function<SmallLoopResult(const cases::TestCase&)>;

/// Text handed to case regeneration.
std::string failure_summary(const EscalationTicket& ticket);

/// Regenerates the case up to `max_regenerations` times; manual review only
/// after every regenerated case also escalated. Throws PreconditionViolation
/// on an empty history.
EscalationResult escalate(EscalationTicket ticket, const cases::TestCase& original, const Regenerator& regenerate,
                          const LoopRunner& run_loop, int max_regenerations = 1);

} // namespace conformgen::loops
