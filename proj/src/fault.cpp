#include "conformgen/fault.hpp"

#include "conformgen/text.hpp"

#include <algorithm>
#include <map>

namespace conformgen::faults {

std::string to_string(FaultCategory c)
{
    switch (c) {
    case FaultCategory::syntax_error: return "syntax_error";
    case FaultCategory::configuration_mismatch: return "configuration_mismatch";
    case FaultCategory::unsupported_command: return "unsupported_command";
    case FaultCategory::assertion_failure: return "assertion_failure";
    case FaultCategory::environment: return "environment";
    }
    return "syntax_error";
}

std::optional<FaultCategory> category_from_string(const std::string& s)
{
    for (auto c : {FaultCategory::syntax_error, FaultCategory::configuration_mismatch, FaultCategory::unsupported_command,
                   FaultCategory::assertion_failure, FaultCategory::environment})
        if (to_string(c) == s)
            return c;
    return std::nullopt;
}

Json FaultReport::to_json() const
{
    return {{"category", to_string(category)},
            {"evidence", evidence},
            {"source_events", source_events},
            {"subject", subject},
            {"signature", signature}};
}

FaultReport FaultReport::from_json(const Json& j)
{
    FaultReport r;
    auto c = category_from_string(j.at("category").get<std::string>());
    if (!c)
        throw Error(ErrorKind::InvalidConfig, j.at("category").get<std::string>(), "unknown fault category");
    r.category = *c;
    r.evidence = j.at("evidence").get<std::string>();
    r.source_events = j.value("source_events", std::vector<std::size_t>{});
    r.subject = j.value("subject", "");
    r.signature = j.value("signature", normalize_signature(r.evidence));
    return r;
}

ClassificationRules ClassificationRules::from_json(const Json& j)
{
    ClassificationRules r;
    for (const auto& rule : j.at("rules")) {
        auto kind = testbed::event_kind_from_string(rule.at("kind").get<std::string>());
        auto cat = category_from_string(rule.at("category").get<std::string>());
        if (!kind || !testbed::is_failure(*kind))
            throw Error(ErrorKind::InvalidConfig, rule.at("kind").get<std::string>(), "rule kind must be a failure event");
        if (!cat)
            throw Error(ErrorKind::InvalidConfig, rule.at("category").get<std::string>(), "unknown fault category");
        auto pattern = rule.at("pattern").get<std::string>();
        r.rules_.push_back({*kind, pattern, std::regex(pattern, std::regex::icase), *cat});
    }
    return r;
}

const ClassificationRules& ClassificationRules::defaults()
{
    static const ClassificationRules rules = from_json(load_json_data("loops/classification_rules.json"));
    return rules;
}

FaultCategory ClassificationRules::categorize(const testbed::Event& e) const
{
    for (const auto& r : rules_)
        if (r.kind == e.kind && std::regex_search(e.detail, r.compiled))
            return r.category;
    switch (e.kind) {
    case testbed::EventKind::config_reject: return FaultCategory::configuration_mismatch;
    case testbed::EventKind::api_error: return FaultCategory::unsupported_command;
    default: return FaultCategory::assertion_failure;
    }
}

std::vector<FaultReport> classify(const testbed::ExecutionLog& log, const ClassificationRules& rules)
{
    std::vector<FaultReport> out;
    for (std::size_t i = 0; i < log.events.size(); ++i) {
        const auto& e = log.events[i];
        if (!testbed::is_failure(e.kind))
            continue;
        FaultReport r;
        r.category = rules.categorize(e);
        r.evidence = "line " + std::to_string(e.line) + ": " + (e.line_or_call.empty() ? "(script)" : e.line_or_call) +
                     ": " + (e.detail.empty() ? testbed::to_string(e.kind) : e.detail);
        r.source_events = {i};
        r.subject = e.line_or_call;
        r.signature = normalize_signature(e.detail + ": " + e.line_or_call);
        out.push_back(std::move(r));
    }
    return out;
}

std::string normalize_signature(const std::string& input)
{
    static const std::regex addr(R"(\b\d{1,3}(\.\d{1,3}){3}(/\d{1,2})?\b)");
    static const std::regex digits(R"(\d+)");
    auto s = text::to_lower(input);
    s = std::regex_replace(s, addr, "<addr>");
    s = std::regex_replace(s, digits, "<n>");
    return text::collapse_whitespace(s);
}

double signature_similarity(const std::string& a, const std::string& b)
{
    auto ta = text::words(a), tb = text::words(b);
    if (ta.empty() && tb.empty())
        return 1.0;
    std::map<std::string, int> ca;
    for (const auto& t : ta)
        ++ca[t];
    std::size_t common = 0;
    for (const auto& t : tb) {
        auto it = ca.find(t);
        if (it != ca.end() && it->second > 0) {
            --it->second;
            ++common;
        }
    }
    return static_cast<double>(common) / static_cast<double>(std::max(ta.size(), tb.size()));
}

void LoopConfig::validate() const
{
    if (max_rounds_per_attempt < 1)
        throw Error(ErrorKind::InvalidConfig, "max_rounds_per_attempt", "must be at least 1");
    if (max_attempts < 1)
        throw Error(ErrorKind::InvalidConfig, "max_attempts", "must be at least 1");
    if (max_regenerations < 0)
        throw Error(ErrorKind::InvalidConfig, "max_regenerations", "must be non-negative");
}

LoopConfig LoopConfig::from_json(const Json& j)
{
    LoopConfig c;
    c.max_rounds_per_attempt = j.value("max_rounds_per_attempt", 10);
    c.max_attempts = j.value("max_attempts", 3);
    c.max_regenerations = j.value("max_regenerations", 1);
    c.validate();
    return c;
}

Json LoopConfig::to_json() const
{
    return {{"max_rounds_per_attempt", max_rounds_per_attempt},
            {"max_attempts", max_attempts},
            {"max_regenerations", max_regenerations}};
}

} // namespace conformgen::faults
