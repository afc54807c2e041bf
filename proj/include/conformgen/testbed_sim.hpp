#pragma once

#include "conformgen/data.hpp"
#include "conformgen/error.hpp"

#include <map>
#include <optional>
#include <regex>
#include <string>
#include <vector>

namespace conformgen::testbed {

enum class EventKind { config_accept, config_reject, api_call, api_error, assertion_pass, assertion_fail };

std::string to_string(EventKind k);
std::optional<EventKind> event_kind_from_string(const std::string& s);
bool is_failure(EventKind k);

struct Event {
    EventKind kind = EventKind::config_accept;
    /// 1-based line in the config or script the event came from.
    std::size_t line = 0;
    std::string line_or_call;
    std::string detail;

    Json to_json() const;
    static Event from_json(const Json& j);
    bool operator==(const Event&) const = default;
};

struct ExecutionLog {
    std::vector<Event> events;

    bool empty() const { return events.empty(); }
    std::size_t failures() const;
    std::size_t count(EventKind k) const;
    void append(const ExecutionLog& other);

    Json to_json() const;
    static ExecutionLog from_json(const Json& j);
    std::vector<Json> to_jsonl() const;
    static ExecutionLog read(const std::filesystem::path& jsonl);
    void write(const std::filesystem::path& jsonl) const;
};

// ---------------------------------------------------------------------------
// Devices

struct Device {
    std::string name;
    std::string role; // dut or tester
    std::vector<std::string> interfaces;
};

struct TestbedProfile {
    std::vector<Device> devices;

    const Device* find(const std::string& name) const;
    const Device* first_with_role(const std::string& role) const;
    std::vector<std::string> tester_ports() const;
    std::vector<std::string> dut_interfaces() const;

    static TestbedProfile from_json(const Json& j);
    Json to_json() const;
    static TestbedProfile defaults(const std::optional<std::filesystem::path>& data_dir = {});
};

// ---------------------------------------------------------------------------
// Slot values

/// Slot types: word, line, int[:lo-hi], enum:a|b, ipv4, ipv4_prefix, netmask,
/// ifname, area, port.
struct SlotType {
    std::string kind;
    std::optional<long long> lo;
    std::optional<long long> hi;
    std::vector<std::string> choices;

    static SlotType parse(const std::string& spec);
};

/// Empty when valid, else a reason.
std::optional<std::string> check_slot(const SlotType& type, const std::string& value,
                                      const TestbedProfile* profile = nullptr);

bool is_ipv4(const std::string& s);
std::optional<int> netmask_length(const std::string& s);

// ---------------------------------------------------------------------------
// CLI grammar

struct CommandTemplate {
    std::string context;
    std::string text;
    /// Context entered after the command is accepted.
    std::optional<std::string> enters;
    /// Leaves the current context for its parent.
    bool exits = false;
    /// A "no" form is accepted for this command.
    bool negatable = true;

    struct Token {
        bool literal = true;
        std::string text;
        SlotType slot;
    };
    std::vector<Token> tokens;
};

struct ParseOutcome {
    bool accepted = false;
    std::string normalized;
    std::string detail;
    std::string context_after;
};

class CliGrammar {
  public:
    static CliGrammar from_json(const Json& j);
    static CliGrammar defaults(const std::optional<std::filesystem::path>& data_dir = {});

    const std::vector<CommandTemplate>& commands() const { return commands_; }
    const std::map<std::string, std::string>& parents() const { return parents_; }
    const std::string& root_context() const { return root_; }

    /// Collapse whitespace and trim; comment or blank lines give nullopt.
    std::optional<std::string> normalize(const std::string& raw) const;

    /// Parses one normalized line in `context`. Global commands are accepted
    /// from nested contexts by implicitly leaving them.
    ParseOutcome parse(const std::string& line, const std::string& context,
                       const TestbedProfile* profile = nullptr) const;

  private:
    enum class Match { full, bad_slot, incomplete, none };
    Match match(const CommandTemplate& cmd, const std::vector<std::string>& words, const TestbedProfile* profile,
                std::string& why) const;
    std::vector<std::string> chain(const std::string& context) const;

    std::vector<CommandTemplate> commands_;
    std::map<std::string, std::string> parents_;
    std::string root_ = "global";
    std::vector<std::string> comment_prefixes_;
};

// ---------------------------------------------------------------------------
// Tester API

struct ApiParam {
    std::string name;
    SlotType type;
    bool required = true;
};

struct ApiEntry {
    std::string name;
    std::vector<ApiParam> params;
    std::string effect;

    std::size_t arity() const { return params.size(); }
};

enum class CheckMode { config_has, called, expect };

struct CheckEntry {
    std::string name;
    CheckMode mode = CheckMode::expect;
    std::string description;
};

class TesterApiRegistry {
  public:
    static TesterApiRegistry from_json(const Json& j);
    static TesterApiRegistry defaults(const std::optional<std::filesystem::path>& data_dir = {});

    const ApiEntry* find(const std::string& name) const;
    const CheckEntry* find_check(const std::string& name) const;
    const std::vector<ApiEntry>& entries() const { return entries_; }
    const std::vector<CheckEntry>& checks() const { return checks_; }

  private:
    std::vector<ApiEntry> entries_;
    std::vector<CheckEntry> checks_;
};

// ---------------------------------------------------------------------------
// Scripts

struct ScriptStep {
    enum class Kind { call, assertion } kind = Kind::call;
    std::size_t line = 0;
    std::string name;
    /// Ordered key/value arguments; positional arguments get keys "_1", "_2"...
    std::vector<std::pair<std::string, std::string>> args;
    std::string text;
};

/// Reads the call-list dialect (`call name k=v`, `assert check args`) and,
/// for other lines, extracts `tester.name(...)` / `expect.name(...)` calls.
std::vector<ScriptStep> parse_script(const std::vector<std::string>& lines);

/// `name k=v ...` rendering used in events and metrics.
std::string canonical_call(const ScriptStep& step);

// ---------------------------------------------------------------------------
// Fault injection

enum class FaultTarget { config, call, assertion };

struct InjectedFault {
    FaultTarget target = FaultTarget::config;
    std::optional<std::string> pattern;
    /// 1-based position among steps of the target kind.
    std::optional<std::size_t> ordinal;
    EventKind event = EventKind::config_reject;
    std::string detail;
    /// Fires at most this many times per session; unlimited when unset.
    std::optional<int> max_hits;

    std::regex compiled;
};

struct FaultProfile {
    std::string name;
    std::vector<InjectedFault> faults;

    /// Throws InvalidConfig when two triggers coincide.
    static FaultProfile from_json(const Json& j);
    static FaultProfile load(const std::filesystem::path& path);
    Json to_json() const;
};

// ---------------------------------------------------------------------------
// Session

struct ExecutableArtifact {
    std::string case_id;
    std::vector<std::string> tester_script;
    std::vector<std::string> dut_config;

    Json to_json() const;
    static ExecutableArtifact from_json(const Json& j);
};

struct ScriptResult {
    ExecutionLog log;
    /// Canonical form of every call that executed successfully.
    std::vector<std::string> calls;
};

class Session {
  public:
    Session(CliGrammar grammar, TesterApiRegistry registry, TestbedProfile profile,
            std::optional<FaultProfile> faults = std::nullopt);

    /// Clears device state; fault hit counters persist for the session.
    void reset();

    ExecutionLog apply_config(const std::vector<std::string>& lines);
    ScriptResult run_script(const std::vector<std::string>& lines);

    /// reset + apply + run, counted as one testbed execution.
    ExecutionLog execute(const ExecutableArtifact& artifact);

    std::size_t executions() const { return executions_; }
    const std::vector<std::string>& running_config() const { return running_; }
    const TestbedProfile& profile() const { return profile_; }
    const CliGrammar& grammar() const { return grammar_; }
    const TesterApiRegistry& registry() const { return registry_; }
    void set_faults(std::optional<FaultProfile> faults);

  private:
    const InjectedFault* trigger(FaultTarget target, const std::string& text, std::size_t ordinal);

    CliGrammar grammar_;
    TesterApiRegistry registry_;
    TestbedProfile profile_;
    std::optional<FaultProfile> faults_;
    std::vector<int> hits_;
    std::vector<std::string> running_;
    std::vector<std::string> called_;
    std::size_t executions_ = 0;
};

/// Session over the shipped grammar, registry and device profile.
Session default_session(std::optional<FaultProfile> faults = std::nullopt,
                        const std::optional<std::filesystem::path>& data_dir = {});

} // namespace conformgen::testbed
