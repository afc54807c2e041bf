#include "conformgen/metrics.hpp"

#include "conformgen/testbed_sim.hpp"
#include "conformgen/text.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

namespace conformgen::metrics {

std::string to_string(LineKind k) { return k == LineKind::script ? "script" : "config"; }

LineKind line_kind_from_string(const std::string& s)
{
    if (s == "script")
        return LineKind::script;
    if (s == "config")
        return LineKind::config;
    throw Error(ErrorKind::InvalidConfig, s, "line kind must be script or config");
}

EquivalenceRules EquivalenceRules::from_json(const Json& j)
{
    EquivalenceRules r;
    for (const auto& rule : j.at("rules")) {
        EquivalenceRule e;
        e.kind = rule.at("kind").get<std::string>();
        if (e.kind != "netmask_to_cidr" && e.kind != "rewrite")
            throw Error(ErrorKind::InvalidConfig, e.kind, "unknown equivalence rule kind");
        e.pattern = rule.at("pattern").get<std::string>();
        e.replacement = rule.value("replacement", "");
        e.compiled = std::regex(e.pattern);
        r.rules_.push_back(std::move(e));
    }
    r.comment_prefixes_ = j.value("config_comment_prefixes", std::vector<std::string>{"!", "#"});
    return r;
}

const EquivalenceRules& EquivalenceRules::defaults()
{
    static const EquivalenceRules rules = from_json(load_json_data("metrics/equivalence_rules.json"));
    return rules;
}

bool EquivalenceRules::is_comment(const std::string& line) const
{
    return std::any_of(comment_prefixes_.begin(), comment_prefixes_.end(),
                       [&](const std::string& p) { return line.rfind(p, 0) == 0; });
}

std::string EquivalenceRules::apply(const std::string& line) const
{
    auto out = line;
    for (const auto& r : rules_) {
        std::smatch m;
        if (!std::regex_search(out, m, r.compiled))
            continue;
        if (r.kind == "rewrite") {
            out = std::regex_replace(out, r.compiled, r.replacement);
            continue;
        }
        auto len = testbed::netmask_length(m[3].str());
        if (len && testbed::is_ipv4(m[2].str()))
            out = m[1].str() + m[2].str() + "/" + std::to_string(*len);
    }
    return text::collapse_whitespace(out);
}

std::optional<std::string> normalize_line(const std::string& raw, LineKind kind, const EquivalenceRules& rules)
{
    auto line = text::collapse_whitespace(raw);
    if (line.empty())
        return std::nullopt;
    if (kind == LineKind::config) {
        if (rules.is_comment(line))
            return std::nullopt;
        return rules.apply(line);
    }
    if (line[0] == '#' || line[0] == '!' || line.rfind("//", 0) == 0)
        return std::nullopt;
    auto steps = testbed::parse_script({line});
    if (steps.empty())
        return line;
    const auto& s = steps.front();
    return (s.kind == testbed::ScriptStep::Kind::assertion ? "assert " : "call ") + testbed::canonical_call(s);
}

LineSequence normalize_lines(const std::vector<std::string>& raw, LineKind kind, const EquivalenceRules& rules)
{
    LineSequence out;
    for (const auto& r : raw)
        if (auto u = normalize_line(r, kind, rules))
            out.push_back(std::move(*u));
    return out;
}

RecallResult line_recall(const LineSequence& answer, const LineSequence& output)
{
    RecallResult r;
    r.answer_lines = answer.size();
    if (answer.empty()) {
        r.recall = output.empty() ? 1.0 : 0.0;
        r.warnings.push_back({"empty_answer", "answer has no lines; recall is undefined"});
        return r;
    }
    std::map<std::string, std::size_t> have;
    for (const auto& l : output)
        ++have[l];
    for (const auto& l : answer) {
        auto it = have.find(l);
        if (it != have.end() && it->second > 0) {
            --it->second;
            ++r.matched;
        }
    }
    r.recall = static_cast<double>(r.matched) / static_cast<double>(answer.size());
    return r;
}

std::size_t edit_distance(const LineSequence& a, const LineSequence& b)
{
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j)
        prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double similarity(const LineSequence& answer, const LineSequence& output)
{
    auto n = std::max(answer.size(), output.size());
    if (n == 0)
        return 1.0;
    return 1.0 - static_cast<double>(edit_distance(answer, output)) / static_cast<double>(n);
}

double validation_rate(const std::vector<bool>& verdicts)
{
    if (verdicts.empty())
        throw Error(ErrorKind::PreconditionViolation, "verdicts", "validation rate needs at least one verdict");
    auto n = std::count(verdicts.begin(), verdicts.end(), true);
    return static_cast<double>(n) / static_cast<double>(verdicts.size());
}

double estimate_fix_time(double gen_time_min, double vr, double sim, double manual_time_min)
{
    if (gen_time_min < 0 || manual_time_min < 0)
        throw Error(ErrorKind::PreconditionViolation, "time", "times must be non-negative");
    if (vr < 0 || vr > 1 || sim < 0 || sim > 1)
        throw Error(ErrorKind::PreconditionViolation, "rate", "VR and SIM must lie in [0,1]");
    return gen_time_min + (1.0 - vr) * (1.0 - sim) * manual_time_min;
}

double speedup(double manual_time_min, double fix_time_min)
{
    if (fix_time_min == 0.0)
        throw Error(ErrorKind::DivisionByZero, "fix_time", "fix time is zero");
    return manual_time_min / fix_time_min;
}

Json Counts::to_json() const
{
    return {{"n_validated", n_validated},     {"n_total", n_total},   {"matched_lines", matched_lines},
            {"answer_lines", answer_lines},   {"edit_distance", edit_distance},
            {"len_ans", len_ans},             {"len_out", len_out}};
}

namespace {

Counts counts_from_json(const Json& j)
{
    Counts c;
    c.n_validated = j.value("n_validated", 0u);
    c.n_total = j.value("n_total", 0u);
    c.matched_lines = j.value("matched_lines", 0u);
    c.answer_lines = j.value("answer_lines", 0u);
    c.edit_distance = j.value("edit_distance", 0u);
    c.len_ans = j.value("len_ans", 0u);
    c.len_out = j.value("len_out", 0u);
    return c;
}

std::string pct(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f%%", v * 100.0);
    return buf;
}

} // namespace

Json PairReport::to_json() const
{
    return {{"name", name},         {"kind", to_string(kind)}, {"recall", recall},
            {"similarity", similarity}, {"validated", validated}, {"counts", counts.to_json()}};
}

PairReport compare(const std::string& name, const std::vector<std::string>& answer_raw,
                   const std::vector<std::string>& output_raw, LineKind kind, bool validated,
                   const EquivalenceRules& rules)
{
    auto ans = normalize_lines(answer_raw, kind, rules);
    auto out = normalize_lines(output_raw, kind, rules);
    PairReport p;
    p.name = name;
    p.kind = kind;
    p.validated = validated;
    auto r = line_recall(ans, out);
    p.recall = r.recall;
    p.similarity = similarity(ans, out);
    p.counts.n_total = 1;
    p.counts.n_validated = validated ? 1 : 0;
    p.counts.matched_lines = r.matched;
    p.counts.answer_lines = r.answer_lines;
    p.counts.edit_distance = edit_distance(ans, out);
    p.counts.len_ans = ans.size();
    p.counts.len_out = out.size();
    return p;
}

MetricReport aggregate(LineKind kind, std::vector<PairReport> pairs, bool verdicts_known, Warnings warnings)
{
    MetricReport m;
    m.kind = kind;
    m.warnings = std::move(warnings);
    if (pairs.empty())
        throw Error(ErrorKind::PreconditionViolation, to_string(kind), "no answer/output pairs to score");
    std::vector<bool> verdicts;
    for (const auto& p : pairs) {
        verdicts.push_back(p.validated);
        m.recall += p.recall;
        m.similarity += p.similarity;
        m.counts.n_total += p.counts.n_total;
        m.counts.n_validated += p.counts.n_validated;
        m.counts.matched_lines += p.counts.matched_lines;
        m.counts.answer_lines += p.counts.answer_lines;
        m.counts.edit_distance += p.counts.edit_distance;
        m.counts.len_ans += p.counts.len_ans;
        m.counts.len_out += p.counts.len_out;
        if (p.counts.answer_lines == 0)
            m.warnings.push_back({"empty_answer", p.name + ": answer has no lines"});
    }
    m.recall /= static_cast<double>(pairs.size());
    m.similarity /= static_cast<double>(pairs.size());
    if (verdicts_known)
        m.validation_rate = validation_rate(verdicts);
    else
        m.warnings.push_back({"no_verdicts", "no review verdicts supplied; VR not reported"});
    m.pairs = std::move(pairs);
    return m;
}

Json MetricReport::to_json() const
{
    Json ps = Json::array();
    for (const auto& p : pairs)
        ps.push_back(p.to_json());
    Json ws = Json::array();
    for (const auto& w : warnings)
        ws.push_back({{"code", w.code}, {"message", w.message}});
    return {{"kind", to_string(kind)},
            {"validation_rate", validation_rate ? Json(*validation_rate) : Json(nullptr)},
            {"recall", recall},
            {"similarity", similarity},
            {"ned", 1.0 - similarity},
            {"counts", counts.to_json()},
            {"pairs", ps},
            {"warnings", ws}};
}

MetricReport MetricReport::from_json(const Json& j)
{
    MetricReport m;
    m.kind = line_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("validation_rate") && !j.at("validation_rate").is_null())
        m.validation_rate = j.at("validation_rate").get<double>();
    m.recall = j.at("recall").get<double>();
    m.similarity = j.at("similarity").get<double>();
    m.counts = counts_from_json(j.value("counts", Json::object()));
    for (const auto& p : j.value("pairs", Json::array())) {
        PairReport r;
        r.name = p.value("name", "");
        r.kind = line_kind_from_string(p.value("kind", "config"));
        r.recall = p.value("recall", 0.0);
        r.similarity = p.value("similarity", 0.0);
        r.validated = p.value("validated", false);
        r.counts = counts_from_json(p.value("counts", Json::object()));
        m.pairs.push_back(std::move(r));
    }
    for (const auto& w : j.value("warnings", Json::array()))
        m.warnings.push_back({w.value("code", ""), w.value("message", "")});
    return m;
}

std::string render_table(const std::vector<MetricReport>& reports)
{
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-8s %6s %8s %8s %8s\n", "Kind", "Cases", "VR", "R", "SIM");
    out += buf;
    for (const auto& r : reports) {
        std::snprintf(buf, sizeof buf, "%-8s %6zu %8s %8s %8s\n", to_string(r.kind).c_str(), r.counts.n_total,
                      (r.validation_rate ? pct(*r.validation_rate) : std::string("n/a")).c_str(), pct(r.recall).c_str(), pct(r.similarity).c_str());
        out += buf;
    }
    return out;
}

} // namespace conformgen::metrics
