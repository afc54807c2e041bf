#include "conformgen/feedback_loops.hpp"

#include "conformgen/text.hpp"

#include <algorithm>
#include <set>

namespace conformgen::loops {

std::string to_string(SuspectedOrigin o)
{
    switch (o) {
    case SuspectedOrigin::dut_defect_or_docs: return "dut_defect_or_docs";
    case SuspectedOrigin::tester_limitation: return "tester_limitation";
    case SuspectedOrigin::test_case_flaw: return "test_case_flaw";
    }
    return "test_case_flaw";
}

std::string to_string(Disposition d)
{
    return d == Disposition::regenerate_case ? "regenerate_case" : "manual_review";
}

namespace {

std::optional<SuspectedOrigin> origin_from_string(const std::string& s)
{
    for (auto o : {SuspectedOrigin::dut_defect_or_docs, SuspectedOrigin::tester_limitation, SuspectedOrigin::test_case_flaw})
        if (to_string(o) == s)
            return o;
    return std::nullopt;
}

bool has_category(const std::vector<FaultReport>& faults, faults::FaultCategory c)
{
    return std::any_of(faults.begin(), faults.end(), [&](const FaultReport& f) { return f.category == c; });
}

Json faults_json(const std::vector<FaultReport>& faults)
{
    Json arr = Json::array();
    for (const auto& f : faults)
        arr.push_back(f.to_json());
    return arr;
}

} // namespace

const std::vector<FaultReport>& AttemptRecord::final_faults() const
{
    static const std::vector<FaultReport> none;
    return round_faults.empty() ? none : round_faults.back();
}

Json AttemptRecord::to_json() const
{
    Json rf = Json::array();
    for (const auto& r : round_faults)
        rf.push_back(faults_json(r));
    return {{"attempt", attempt}, {"rounds", rounds}, {"round_faults", rf}};
}

Json EscalationTicket::to_json() const
{
    Json h = Json::array();
    for (const auto& a : history)
        h.push_back(a.to_json());
    return {{"case_id", case_id},
            {"suspected_origin", to_string(suspected_origin)},
            {"disposition", to_string(disposition)},
            {"regeneration_attempts", regeneration_attempts},
            {"history", h}};
}

Json LoopTrace::to_json() const
{
    return {{"case_id", case_id}, {"rounds", rounds}, {"outcome", outcome}};
}

OriginRules OriginRules::from_json(const Json& j)
{
    static const std::set<std::string> scopes = {"final_round", "every_attempt", "clean_deployment"};
    OriginRules r;
    for (const auto& rule : j.at("rules")) {
        auto cat = faults::category_from_string(rule.at("category").get<std::string>());
        if (!cat)
            throw Error(ErrorKind::InvalidConfig, rule.at("category").get<std::string>(), "unknown fault category");
        auto scope = rule.at("scope").get<std::string>();
        if (!scopes.count(scope))
            throw Error(ErrorKind::InvalidConfig, scope, "unknown origin rule scope");
        auto origin = origin_from_string(rule.at("origin").get<std::string>());
        if (!origin)
            throw Error(ErrorKind::InvalidConfig, rule.at("origin").get<std::string>(), "unknown suspected origin");
        r.rules.push_back({*cat, scope, *origin});
    }
    if (j.contains("fallback")) {
        auto fb = origin_from_string(j.at("fallback").get<std::string>());
        if (!fb)
            throw Error(ErrorKind::InvalidConfig, j.at("fallback").get<std::string>(), "unknown suspected origin");
        r.fallback = *fb;
    }
    return r;
}

const OriginRules& OriginRules::defaults()
{
    static const OriginRules rules = from_json(load_json_data("loops/origin_rules.json"));
    return rules;
}

SuspectedOrigin suspect_origin(const std::vector<AttemptRecord>& history, const OriginRules& rules)
{
    if (history.empty())
        return rules.fallback;
    const auto& last = history.back().final_faults();
    for (const auto& r : rules.rules) {
        bool hit = false;
        if (r.scope == "final_round") {
            hit = has_category(last, r.category);
        } else if (r.scope == "every_attempt") {
            hit = std::all_of(history.begin(), history.end(),
                              [&](const AttemptRecord& a) { return has_category(a.final_faults(), r.category); });
        } else if (r.scope == "clean_deployment") {
            hit = has_category(last, r.category) && std::all_of(last.begin(), last.end(), [](const FaultReport& f) {
                      return f.category == faults::FaultCategory::assertion_failure;
                  });
        }
        if (hit)
            return r.origin;
    }
    return rules.fallback;
}

bool passes(const testbed::ExecutionLog& log)
{
    return log.failures() == 0 && log.count(testbed::EventKind::assertion_pass) > 0;
}

SmallLoopResult run_small_loop(const cases::TestCase& tc, forge::ArtifactAgent& agent, testbed::Session& session,
                               const LoopConfig& config, LoopTrace* trace)
{
    config.validate();
    if (trace)
        *trace = LoopTrace{tc.case_id, {}, Json::object()};

    forge::RunOutcome outcome;
    outcome.test_case = tc;
    outcome.intents = agent.orchestrate(tc);
    outcome.few_shot_ids = agent.last_few_shot_ids();

    std::vector<AttemptRecord> history;
    for (int attempt = 1; attempt <= config.max_attempts; ++attempt) {
        AttemptRecord rec;
        rec.attempt = attempt;
        std::optional<forge::RoundFeedback> feedback;
        for (int round = 1; round <= config.max_rounds_per_attempt; ++round) {
            forge::RoundRecord rr;
            rr.attempt = attempt;
            rr.round = round;
            testbed::ExecutionLog log;
            bool deployed = false;
            try {
                auto d = agent.draft(tc, outcome.intents, feedback ? &*feedback : nullptr);
                rr.artifact = d.artifact;
                for (const auto& e : d.retrieved)
                    rr.retrieved_refs.push_back(e.entry_id);
                log = session.execute(rr.artifact);
                deployed = true;
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::SchemaViolation)
                    throw;
                FaultReport f;
                f.category = faults::FaultCategory::syntax_error;
                f.evidence = "draft: " + std::string(e.what());
                f.signature = faults::normalize_signature("malformed draft");
                rr.faults.push_back(std::move(f));
                rr.artifact.case_id = tc.case_id;
                if (feedback)
                    rr.artifact = feedback->previous;
            }

            bool ok = deployed && passes(log);
            if (deployed && !ok) {
                rr.faults = faults::classify(log);
                if (rr.faults.empty()) {
                    FaultReport f;
                    f.category = faults::FaultCategory::assertion_failure;
                    f.evidence = "no passing assertion";
                    f.signature = faults::normalize_signature(f.evidence);
                    rr.faults.push_back(std::move(f));
                }
            }
            std::vector<forge::Correction> fixes;
            for (const auto& f : rr.faults) {
                fixes.push_back(agent.correct(f));
                rr.fixes.push_back(fixes.back().fix);
            }
            ++rec.rounds;
            rec.round_faults.push_back(rr.faults);

            if (trace) {
                Json fx = Json::array();
                for (const auto& c : fixes)
                    fx.push_back(c.to_json());
                trace->rounds.push_back({{"attempt", attempt},
                                         {"round", round},
                                         {"deployed", deployed},
                                         {"artifact", rr.artifact.to_json()},
                                         {"log", log.to_json()},
                                         {"faults", faults_json(rr.faults)},
                                         {"fixes", fx},
                                         {"retrieved", rr.retrieved_refs}});
            }
            outcome.rounds.push_back(rr);

            if (ok) {
                outcome.passed = true;
                auto update = agent.finish(outcome);
                Pass p{rr.artifact, round, attempt, session.executions()};
                if (trace)
                    trace->outcome = {{"status", "pass"},
                                      {"rounds", p.rounds},
                                      {"attempt", attempt},
                                      {"kb_update", update.to_json()}};
                return p;
            }
            feedback = forge::RoundFeedback{round, rr.artifact, log, rr.faults, fixes};
        }
        history.push_back(std::move(rec));
    }

    auto update = agent.finish(outcome);
    EscalationTicket ticket;
    ticket.case_id = tc.case_id;
    ticket.history = std::move(history);
    ticket.suspected_origin = suspect_origin(ticket.history);
    if (trace)
        trace->outcome = {{"status", "escalated"}, {"ticket", ticket.to_json()}, {"kb_update", update.to_json()}};
    return ticket;
}

std::string failure_summary(const EscalationTicket& ticket)
{
    std::vector<std::string> lines;
    lines.push_back("Suspected origin: " + to_string(ticket.suspected_origin));
    for (const auto& a : ticket.history) {
        lines.push_back("Attempt " + std::to_string(a.attempt) + " (" + std::to_string(a.rounds) + " rounds), final faults:");
        for (const auto& f : a.final_faults())
            lines.push_back("- [" + faults::to_string(f.category) + "] " + f.evidence);
    }
    return text::join(lines, "\n");
}

EscalationResult escalate(EscalationTicket ticket, const cases::TestCase& original, const Regenerator& regenerate,
                          const LoopRunner& run_loop, int max_regenerations)
{
    if (ticket.history.empty())
        throw Error(ErrorKind::PreconditionViolation, ticket.case_id, "escalation ticket has no attempt history");
    std::vector<cases::TestCase> tried;
    for (int i = 0; i < max_regenerations; ++i) {
        auto next = regenerate(original, failure_summary(ticket));
        ++ticket.regeneration_attempts;
        tried.push_back(next);
        auto result = run_loop(next);
        if (auto* p = std::get_if<Pass>(&result)) {
            ticket.disposition = Disposition::regenerate_case;
            return Resolved{{next}, {*p}, std::move(ticket)};
        }
        auto& again = std::get<EscalationTicket>(result);
        ticket.history.insert(ticket.history.end(), again.history.begin(), again.history.end());
    }
    ticket.disposition = Disposition::manual_review;
    return ManualReview{std::move(ticket), std::move(tried)};
}

} // namespace conformgen::loops

namespace conformgen::forge {

ExecutableArtifact generate(const cases::TestCase& tc, ArtifactAgent& agent, testbed::Session& session,
                            const faults::LoopConfig& loop_config)
{
    auto result = loops::run_small_loop(tc, agent, session, loop_config);
    if (auto* p = std::get_if<loops::Pass>(&result))
        return p->artifact;
    const auto& t = std::get<loops::EscalationTicket>(result);
    throw Error(ErrorKind::AttemptsExhausted, tc.case_id,
                "no passing artifact after " + std::to_string(t.history.size()) + " attempts; suspected origin " +
                    loops::to_string(t.suspected_origin));
}

} // namespace conformgen::forge
