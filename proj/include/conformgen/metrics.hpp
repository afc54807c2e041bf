#pragma once

#include "conformgen/data.hpp"
#include "conformgen/error.hpp"

#include <filesystem>
#include <optional>
#include <regex>
#include <string>
#include <vector>

namespace conformgen::metrics {

enum class LineKind { script, config };

std::string to_string(LineKind k);
LineKind line_kind_from_string(const std::string& s);

struct EquivalenceRule {
    std::string kind; // netmask_to_cidr or rewrite
    std::string pattern;
    std::string replacement;
    std::regex compiled;
};

class EquivalenceRules {
  public:
    static EquivalenceRules from_json(const Json& j);
    static const EquivalenceRules& defaults();

    /// Applies every rule in order to an already collapsed config line.
    std::string apply(const std::string& line) const;
    bool is_comment(const std::string& line) const;

  private:
    std::vector<EquivalenceRule> rules_;
    std::vector<std::string> comment_prefixes_;
};

/// Canonical unit for one raw line, or nullopt for blanks and comments.
/// Script lines become canonical API calls; config lines get the
/// equivalence rules (CIDR form is canonical).
std::optional<std::string> normalize_line(const std::string& raw, LineKind kind,
                                          const EquivalenceRules& rules = EquivalenceRules::defaults());

using LineSequence = std::vector<std::string>;

LineSequence normalize_lines(const std::vector<std::string>& raw, LineKind kind,
                             const EquivalenceRules& rules = EquivalenceRules::defaults());

struct RecallResult {
    double recall = 0.0;
    std::size_t matched = 0;
    std::size_t answer_lines = 0;
    Warnings warnings;
};

/// Multiset containment of answer units in the output.
RecallResult line_recall(const LineSequence& answer, const LineSequence& output);

/// Unit-level Levenshtein distance, unit costs.
std::size_t edit_distance(const LineSequence& a, const LineSequence& b);

/// 1 - distance / max length; 1 when both are empty.
double similarity(const LineSequence& answer, const LineSequence& output);

/// Throws PreconditionViolation without verdicts.
double validation_rate(const std::vector<bool>& verdicts);

/// gen + (1 - vr)(1 - sim) manual, in minutes.
double estimate_fix_time(double gen_time_min, double vr, double sim, double manual_time_min);

/// Throws DivisionByZero when fix_time is 0.
double speedup(double manual_time_min, double fix_time_min);

struct Counts {
    std::size_t n_validated = 0;
    std::size_t n_total = 0;
    std::size_t matched_lines = 0;
    std::size_t answer_lines = 0;
    std::size_t edit_distance = 0;
    std::size_t len_ans = 0;
    std::size_t len_out = 0;

    Json to_json() const;
};

struct PairReport {
    std::string name;
    LineKind kind = LineKind::config;
    double recall = 0.0;
    double similarity = 0.0;
    bool validated = false;
    Counts counts;

    Json to_json() const;
};

PairReport compare(const std::string& name, const std::vector<std::string>& answer_raw,
                   const std::vector<std::string>& output_raw, LineKind kind, bool validated,
                   const EquivalenceRules& rules = EquivalenceRules::defaults());

/// Aggregate over pairs of one kind. VR over verdicts (absent when no
/// verdicts were supplied); R and SIM are per-pair means.
struct MetricReport {
    LineKind kind = LineKind::config;
    std::optional<double> validation_rate;
    double recall = 0.0;
    double similarity = 0.0;
    Counts counts;
    std::vector<PairReport> pairs;
    Warnings warnings;

    Json to_json() const;
    static MetricReport from_json(const Json& j);
};

MetricReport aggregate(LineKind kind, std::vector<PairReport> pairs, bool verdicts_known = true, Warnings warnings = {});

/// Fixed-width table with VR/R/SIM columns, one row per report.
std::string render_table(const std::vector<MetricReport>& reports);

} // namespace conformgen::metrics
