#include "conformgen/metrics.hpp"
#include "support.hpp"

#include "doctest.h"

#include <functional>
#include <map>
#include <random>

using namespace conformgen;
using namespace conformgen::metrics;

namespace {

/// Top-down Levenshtein over the full recursion tree, memoized.
std::size_t distance_oracle(const LineSequence& a, const LineSequence& b)
{
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
    std::function<std::size_t(std::size_t, std::size_t)> d = [&](std::size_t i, std::size_t j) -> std::size_t {
        if (i == a.size())
            return b.size() - j;
        if (j == b.size())
            return a.size() - i;
        auto key = std::make_pair(i, j);
        if (auto it = memo.find(key); it != memo.end())
            return it->second;
        std::size_t best = d(i + 1, j + 1) + (a[i] == b[j] ? 0 : 1);
        best = std::min(best, d(i + 1, j) + 1);
        best = std::min(best, d(i, j + 1) + 1);
        return memo[key] = best;
    };
    return d(0, 0);
}

/// Greedy claim of unused output units, one scan per answer unit.
std::size_t matched_oracle(const LineSequence& answer, const LineSequence& output)
{
    std::vector<bool> used(output.size(), false);
    std::size_t n = 0;
    for (const auto& u : answer)
        for (std::size_t k = 0; k < output.size(); ++k)
            if (!used[k] && output[k] == u) {
                used[k] = true;
                ++n;
                break;
            }
    return n;
}

LineSequence random_seq(std::mt19937& rng, std::size_t max_len)
{
    static const std::vector<std::string> vocab = {"router rip", "network 10.0.0.0/8", "interface eth0", "mtu 1500",
                                                   "no shutdown"};
    LineSequence s(rng() % (max_len + 1));
    for (auto& u : s)
        u = vocab[rng() % vocab.size()];
    return s;
}

} // namespace

TEST_SUITE("metrics")
{
    TEST_CASE("normalization")
    {
        CHECK(normalize_line("ip address 10.0.0.1 255.255.255.0", LineKind::config) == "ip address 10.0.0.1/24");
        CHECK(normalize_line("ip address 10.0.0.1 255.255.255.0", LineKind::config) ==
              normalize_line("ip address 10.0.0.1/24", LineKind::config));
        CHECK_FALSE(normalize_line("! comment", LineKind::config).has_value());
        CHECK_FALSE(normalize_line("   ", LineKind::config).has_value());
        CHECK(normalize_line("  ip   address 10.0.0.1/24 ", LineKind::config) == "ip address 10.0.0.1/24");
        CHECK(normalize_line("ip address 10.0.0.1 255.0.255.0", LineKind::config) == "ip address 10.0.0.1 255.0.255.0");
        CHECK(normalize_line("no shut", LineKind::config) == "no shutdown");
        CHECK(normalize_line("int eth1", LineKind::config) == "interface eth1");
        CHECK(normalize_line("tester.wait(5);", LineKind::script) == "call wait 5");
        CHECK(normalize_line("call wait 5", LineKind::script) == "call wait 5");
        CHECK(normalize_line("assert config_has \"router rip\"", LineKind::script) == "assert config_has \"router rip\"");
        CHECK_FALSE(normalize_line("# setup", LineKind::script).has_value());
        CHECK_FALSE(normalize_line("// setup", LineKind::script).has_value());
    }

    TEST_CASE("equivalent rewrites score as identical")
    {
        std::vector<std::string> answer = {"interface eth0", "ip address 10.0.0.1/24", "no shutdown", "! done"};
        std::vector<std::string> output = {"int eth0", "ip address 10.0.0.1 255.255.255.0", "", "no shut"};
        auto p = compare("eq", answer, output, LineKind::config, true);
        CHECK(p.similarity == 1.0);
        CHECK(p.recall == 1.0);
        CHECK(p.counts.len_ans == 3);
        CHECK(p.counts.len_out == 3);
    }

    TEST_CASE("recall")
    {
        CHECK(line_recall({"a", "b", "c", "d"}, {"d", "x", "b", "a"}).recall == 0.75);
        CHECK(line_recall({"a", "b"}, {"a", "b"}).recall == 1.0);
        CHECK(line_recall({"a", "a"}, {"a"}).recall == 0.5);
        auto e = line_recall({}, {});
        CHECK(e.recall == 1.0);
        CHECK(e.warnings.front().code == "empty_answer");
        auto e2 = line_recall({}, {"a"});
        CHECK(e2.recall == 0.0);
        CHECK(e2.warnings.size() == 1);

        std::mt19937 rng(41);
        for (int t = 0; t < 500; ++t) {
            auto a = random_seq(rng, 8), o = random_seq(rng, 8);
            auto r = line_recall(a, o);
            CHECK(r.matched == matched_oracle(a, o));
            CHECK(r.recall >= 0.0);
            CHECK(r.recall <= 1.0);
            if (!a.empty()) {
                // Appending answer units never lowers recall.
                auto more = o;
                more.push_back(a[rng() % a.size()]);
                CHECK(line_recall(a, more).recall >= r.recall);
            }
        }
    }

    TEST_CASE("edit distance against a memoized recursion")
    {
        CHECK(edit_distance({"a", "b", "c"}, {"a", "b", "d"}) == 1);
        CHECK(similarity({"a", "b", "c"}, {"a", "b", "d"}) == doctest::Approx(1.0 - 1.0 / 3.0));
        CHECK(similarity({}, {"a", "b", "c", "d", "e"}) == 0.0);
        CHECK(similarity({}, {}) == 1.0);
        CHECK(similarity({"x"}, {"x"}) == 1.0);

        std::mt19937 rng(43);
        for (int t = 0; t < 1000; ++t) {
            auto a = random_seq(rng, 9), b = random_seq(rng, 9), c = random_seq(rng, 9);
            auto d = edit_distance(a, b);
            CHECK(d == distance_oracle(a, b));
            CHECK(d == edit_distance(b, a));
            CHECK(edit_distance(a, c) <= d + edit_distance(b, c));
            auto n = std::max(a.size(), b.size());
            double expected = n == 0 ? 1.0 : 1.0 - static_cast<double>(distance_oracle(a, b)) / static_cast<double>(n);
            CHECK(similarity(a, b) == expected);
        }
    }

    TEST_CASE("validation rate")
    {
        std::vector<bool> v(29, true);
        v[0] = v[1] = v[2] = false;
        CHECK(validation_rate(v) == doctest::Approx(0.897).epsilon(0.001));
        v[2] = true;
        CHECK(validation_rate(v) == doctest::Approx(0.931).epsilon(0.001));
        CHECK(validation_rate({true, true}) == 1.0);
        CHECK_THROWS_AS(validation_rate({}), Error);
    }

    TEST_CASE("fix time and speedup")
    {
        auto fix = estimate_fix_time(9.10, 0.897, 0.724, 104.4);
        CHECK(fix == doctest::Approx(12.07).epsilon(0.05 / 12.07));
        CHECK(speedup(104.4, 12.07) == doctest::Approx(8.65).epsilon(0.02 / 8.65));
        CHECK(estimate_fix_time(9.10, 1.0, 0.3, 104.4) == 9.10);
        CHECK_THROWS_AS(estimate_fix_time(-1, 0.5, 0.5, 10), Error);
        CHECK_THROWS_AS(estimate_fix_time(1, 1.5, 0.5, 10), Error);
        try {
            speedup(10, 0);
            FAIL("expected DivisionByZero");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::DivisionByZero);
        }
    }

    TEST_CASE("aggregation and report round-trip")
    {
        auto p1 = compare("a", {"router rip", "network 10.0.0.0/8"}, {"router rip"}, LineKind::config, true);
        auto p2 = compare("b", {"router ospf"}, {"router ospf"}, LineKind::config, false);
        auto m = aggregate(LineKind::config, {p1, p2});
        CHECK(m.recall == doctest::Approx(0.75));
        CHECK(m.similarity == doctest::Approx(0.75));
        CHECK(m.validation_rate == 0.5);
        CHECK(m.counts.n_total == 2);
        CHECK(m.counts.matched_lines == 2);
        CHECK(m.counts.answer_lines == 3);
        auto j = m.to_json();
        CHECK(j.at("ned") == doctest::Approx(0.25));
        CHECK(MetricReport::from_json(j).to_json() == j);

        auto unknown = aggregate(LineKind::script, {p1}, false);
        CHECK_FALSE(unknown.validation_rate.has_value());
        CHECK(unknown.warnings.back().code == "no_verdicts");
        CHECK(MetricReport::from_json(unknown.to_json()).to_json() == unknown.to_json());
        CHECK_THROWS_AS(aggregate(LineKind::config, {}), Error);

        auto table = render_table({m, unknown});
        CHECK(table.find("config") != std::string::npos);
        CHECK(table.find("50.0%") != std::string::npos);
        CHECK(table.find("n/a") != std::string::npos);
    }

    TEST_CASE("equivalence rule validation")
    {
        CHECK_THROWS_AS(EquivalenceRules::from_json(Json::parse(R"({"rules":[{"kind":"magic","pattern":"x"}]})")), Error);
        auto r = EquivalenceRules::from_json(
            Json::parse(R"({"rules":[{"kind":"rewrite","pattern":"^sh$","replacement":"shutdown"}],"config_comment_prefixes":[";"]})"));
        CHECK(normalize_line("sh", LineKind::config, r) == "shutdown");
        CHECK_FALSE(normalize_line("; note", LineKind::config, r).has_value());
        CHECK(normalize_line("! kept", LineKind::config, r) == "! kept");
        CHECK(line_kind_from_string("script") == LineKind::script);
        CHECK_THROWS_AS(line_kind_from_string("yaml"), Error);
    }
}
