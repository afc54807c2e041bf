#include "conformgen/testbed_sim.hpp"

#include "conformgen/text.hpp"

#include <algorithm>
#include <charconv>
#include <set>

namespace conformgen::testbed {

namespace {

const std::regex& ifname_re()
{
    static const std::regex re(
        R"(^(eth|ens|enp|eno|ge|gi|gigabitethernet|fastethernet|fa|te|tengigabitethernet|xe|et|lo|loopback|vlan|port|swp|bond)[0-9a-z/.:_-]*$)",
        std::regex::icase);
    return re;
}

bool is_loopback(const std::string& s)
{
    auto l = text::to_lower(s);
    return l.rfind("lo", 0) == 0;
}

std::optional<long long> parse_int(const std::string& s)
{
    if (s.empty() || s.size() > 19)
        return std::nullopt;
    long long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size() || v < 0)
        return std::nullopt;
    return v;
}

bool iequals(const std::string& a, const std::string& b) { return text::to_lower(a) == text::to_lower(b); }

/// Shell-like split: whitespace separates, quotes group, quotes are removed.
std::vector<std::string> shell_split(const std::string& s)
{
    std::vector<std::string> out;
    std::string cur;
    bool have = false;
    char quote = 0;
    for (char c : s) {
        if (quote) {
            if (c == quote)
                quote = 0;
            else
                cur.push_back(c);
            continue;
        }
        if (c == '"' || c == '\'') {
            quote = c;
            have = true;
        } else if (std::isspace(static_cast<unsigned char>(c))) {
            if (have || !cur.empty())
                out.push_back(cur);
            cur.clear();
            have = false;
        } else {
            cur.push_back(c);
        }
    }
    if (have || !cur.empty())
        out.push_back(cur);
    return out;
}

/// Split a call argument list on top-level commas.
std::vector<std::string> split_args(const std::string& s)
{
    std::vector<std::string> out;
    std::string cur;
    char quote = 0;
    int depth = 0;
    for (char c : s) {
        if (quote) {
            cur.push_back(c);
            if (c == quote)
                quote = 0;
            continue;
        }
        if (c == '"' || c == '\'')
            quote = c;
        else if (c == '(' || c == '[' || c == '{')
            ++depth;
        else if (c == ')' || c == ']' || c == '}')
            --depth;
        if (c == ',' && depth == 0) {
            out.push_back(text::trim_copy(cur));
            cur.clear();
            continue;
        }
        cur.push_back(c);
    }
    if (!text::is_blank(cur))
        out.push_back(text::trim_copy(cur));
    return out;
}

std::string unquote(std::string v)
{
    v = text::trim_copy(v);
    if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front())
        return v.substr(1, v.size() - 2);
    return v;
}

void push_arg(ScriptStep& step, const std::string& raw, std::size_t& positional)
{
    auto eq = raw.find('=');
    bool keyed = eq != std::string::npos && eq > 0 && raw.front() != '"' && raw.front() != '\'';
    if (keyed) {
        auto key = text::trim_copy(raw.substr(0, eq));
        bool ident = std::all_of(key.begin(), key.end(),
                                 [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; });
        if (ident) {
            step.args.emplace_back(key, unquote(raw.substr(eq + 1)));
            return;
        }
    }
    step.args.emplace_back("_" + std::to_string(++positional), unquote(raw));
}

} // namespace

// ---------------------------------------------------------------------------

std::string to_string(EventKind k)
{
    switch (k) {
    case EventKind::config_accept: return "config_accept";
    case EventKind::config_reject: return "config_reject";
    case EventKind::api_call: return "api_call";
    case EventKind::api_error: return "api_error";
    case EventKind::assertion_pass: return "assertion_pass";
    case EventKind::assertion_fail: return "assertion_fail";
    }
    return "api_error";
}

std::optional<EventKind> event_kind_from_string(const std::string& s)
{
    for (auto k : {EventKind::config_accept, EventKind::config_reject, EventKind::api_call, EventKind::api_error,
                   EventKind::assertion_pass, EventKind::assertion_fail})
        if (to_string(k) == s)
            return k;
    return std::nullopt;
}

bool is_failure(EventKind k)
{
    return k == EventKind::config_reject || k == EventKind::api_error || k == EventKind::assertion_fail;
}

Json Event::to_json() const
{
    return {{"kind", to_string(kind)}, {"line", line}, {"line_or_call", line_or_call}, {"detail", detail}};
}

Event Event::from_json(const Json& j)
{
    Event e;
    auto k = event_kind_from_string(j.at("kind").get<std::string>());
    if (!k)
        throw Error(ErrorKind::InvalidConfig, j.at("kind").get<std::string>(), "unknown event kind");
    e.kind = *k;
    e.line = j.value("line", std::size_t{0});
    e.line_or_call = j.value("line_or_call", "");
    e.detail = j.value("detail", "");
    return e;
}

std::size_t ExecutionLog::failures() const
{
    return static_cast<std::size_t>(std::count_if(events.begin(), events.end(), [](const Event& e) { return is_failure(e.kind); }));
}

std::size_t ExecutionLog::count(EventKind k) const
{
    return static_cast<std::size_t>(std::count_if(events.begin(), events.end(), [&](const Event& e) { return e.kind == k; }));
}

void ExecutionLog::append(const ExecutionLog& other)
{
    events.insert(events.end(), other.events.begin(), other.events.end());
}

Json ExecutionLog::to_json() const
{
    Json arr = Json::array();
    for (const auto& e : events)
        arr.push_back(e.to_json());
    return arr;
}

ExecutionLog ExecutionLog::from_json(const Json& j)
{
    ExecutionLog log;
    for (const auto& e : j)
        log.events.push_back(Event::from_json(e));
    return log;
}

std::vector<Json> ExecutionLog::to_jsonl() const
{
    std::vector<Json> rows;
    for (const auto& e : events)
        rows.push_back(e.to_json());
    return rows;
}

ExecutionLog ExecutionLog::read(const std::filesystem::path& jsonl)
{
    ExecutionLog log;
    for (const auto& j : io::read_jsonl(jsonl))
        log.events.push_back(Event::from_json(j));
    return log;
}

void ExecutionLog::write(const std::filesystem::path& jsonl) const { io::write_jsonl(jsonl, to_jsonl()); }

// ---------------------------------------------------------------------------

const Device* TestbedProfile::find(const std::string& name) const
{
    auto it = std::find_if(devices.begin(), devices.end(), [&](const Device& d) { return d.name == name; });
    return it == devices.end() ? nullptr : &*it;
}

const Device* TestbedProfile::first_with_role(const std::string& role) const
{
    auto it = std::find_if(devices.begin(), devices.end(), [&](const Device& d) { return d.role == role; });
    return it == devices.end() ? nullptr : &*it;
}

std::vector<std::string> TestbedProfile::tester_ports() const
{
    std::vector<std::string> out;
    for (const auto& d : devices)
        if (d.role == "tester")
            out.insert(out.end(), d.interfaces.begin(), d.interfaces.end());
    return out;
}

std::vector<std::string> TestbedProfile::dut_interfaces() const
{
    std::vector<std::string> out;
    for (const auto& d : devices)
        if (d.role == "dut")
            out.insert(out.end(), d.interfaces.begin(), d.interfaces.end());
    return out;
}

TestbedProfile TestbedProfile::from_json(const Json& j)
{
    TestbedProfile p;
    std::set<std::string> names;
    for (const auto& d : j.at("devices")) {
        Device dev{d.at("name").get<std::string>(), d.at("role").get<std::string>(),
                   d.value("interfaces", std::vector<std::string>{})};
        if (dev.role != "dut" && dev.role != "tester")
            throw Error(ErrorKind::InvalidConfig, dev.name, "device role must be dut or tester");
        if (!names.insert(dev.name).second)
            throw Error(ErrorKind::InvalidConfig, dev.name, "duplicate device name");
        p.devices.push_back(std::move(dev));
    }
    return p;
}

Json TestbedProfile::to_json() const
{
    Json arr = Json::array();
    for (const auto& d : devices)
        arr.push_back({{"name", d.name}, {"role", d.role}, {"interfaces", d.interfaces}});
    return {{"devices", arr}};
}

TestbedProfile TestbedProfile::defaults(const std::optional<std::filesystem::path>& data_dir)
{
    return from_json(load_json_data("testbed/testbed_profile.json", data_dir));
}

// ---------------------------------------------------------------------------

SlotType SlotType::parse(const std::string& spec)
{
    SlotType t;
    auto colon = spec.find(':');
    t.kind = spec.substr(0, colon);
    if (colon == std::string::npos)
        return t;
    auto rest = spec.substr(colon + 1);
    if (t.kind == "int") {
        auto dash = rest.find('-');
        if (dash == std::string::npos)
            throw Error(ErrorKind::InvalidConfig, spec, "int range must be lo-hi");
        t.lo = parse_int(rest.substr(0, dash));
        t.hi = parse_int(rest.substr(dash + 1));
        if (!t.lo || !t.hi || *t.lo > *t.hi)
            throw Error(ErrorKind::InvalidConfig, spec, "bad int range");
    } else if (t.kind == "enum") {
        std::size_t start = 0;
        while (start <= rest.size()) {
            auto bar = rest.find('|', start);
            t.choices.push_back(rest.substr(start, bar == std::string::npos ? std::string::npos : bar - start));
            if (bar == std::string::npos)
                break;
            start = bar + 1;
        }
    } else {
        throw Error(ErrorKind::InvalidConfig, spec, "slot type takes no argument");
    }
    return t;
}

bool is_ipv4(const std::string& s)
{
    int parts = 0;
    std::size_t start = 0;
    while (true) {
        auto dot = s.find('.', start);
        auto part = s.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty() || part.size() > 3 || !std::all_of(part.begin(), part.end(), ::isdigit))
            return false;
        if (std::stoi(part) > 255)
            return false;
        ++parts;
        if (dot == std::string::npos)
            break;
        start = dot + 1;
    }
    return parts == 4;
}

std::optional<int> netmask_length(const std::string& s)
{
    if (!is_ipv4(s))
        return std::nullopt;
    unsigned long v = 0;
    std::size_t start = 0;
    for (int i = 0; i < 4; ++i) {
        auto dot = s.find('.', start);
        v = (v << 8) | static_cast<unsigned long>(std::stoi(s.substr(start, dot - start)));
        start = dot + 1;
    }
    int len = 0;
    bool zero_seen = false;
    for (int bit = 31; bit >= 0; --bit) {
        bool one = (v >> bit) & 1U;
        if (one && zero_seen)
            return std::nullopt;
        if (one)
            ++len;
        else
            zero_seen = true;
    }
    return len;
}

std::optional<std::string> check_slot(const SlotType& type, const std::string& value, const TestbedProfile* profile)
{
    const auto& k = type.kind;
    if (k == "word" || k == "line")
        return value.empty() ? std::optional<std::string>("empty value") : std::nullopt;
    if (k == "int") {
        auto v = parse_int(value);
        if (!v)
            return "'" + value + "' is not an integer";
        if ((type.lo && *v < *type.lo) || (type.hi && *v > *type.hi))
            return "'" + value + "' outside " + std::to_string(*type.lo) + "-" + std::to_string(*type.hi);
        return std::nullopt;
    }
    if (k == "enum") {
        for (const auto& c : type.choices)
            if (iequals(c, value))
                return std::nullopt;
        return "'" + value + "' is not one of " + text::join(type.choices, "|");
    }
    if (k == "ipv4")
        return is_ipv4(value) ? std::nullopt : std::optional<std::string>("'" + value + "' is not an IPv4 address");
    if (k == "ipv4_prefix") {
        auto slash = value.find('/');
        if (slash == std::string::npos || !is_ipv4(value.substr(0, slash)))
            return "'" + value + "' is not an IPv4 prefix";
        auto len = parse_int(value.substr(slash + 1));
        if (!len || *len > 32)
            return "'" + value + "' has a bad prefix length";
        return std::nullopt;
    }
    if (k == "netmask")
        return netmask_length(value) ? std::nullopt : std::optional<std::string>("'" + value + "' is not a netmask");
    if (k == "area") {
        if (is_ipv4(value))
            return std::nullopt;
        auto v = parse_int(value);
        if (v && *v <= 4294967295LL)
            return std::nullopt;
        return "'" + value + "' is not an area id";
    }
    if (k == "ifname") {
        if (!std::regex_match(value, ifname_re()))
            return "'" + value + "' is not an interface name";
        if (profile && !is_loopback(value)) {
            auto ifs = profile->dut_interfaces();
            if (!ifs.empty() && std::none_of(ifs.begin(), ifs.end(), [&](const std::string& i) { return iequals(i, value); }))
                return "no such interface " + value;
        }
        return std::nullopt;
    }
    if (k == "port") {
        if (profile) {
            auto ports = profile->tester_ports();
            if (std::find(ports.begin(), ports.end(), value) == ports.end())
                return "no such tester port " + value;
        }
        return value.empty() ? std::optional<std::string>("empty port") : std::nullopt;
    }
    throw Error(ErrorKind::InvalidConfig, k, "unknown slot type " + k);
}

// ---------------------------------------------------------------------------

CliGrammar CliGrammar::from_json(const Json& j)
{
    CliGrammar g;
    g.root_ = j.value("root", "global");
    g.comment_prefixes_ = j.value("comment_prefixes", std::vector<std::string>{"!"});
    for (const auto& [ctx, parent] : j.at("contexts").items())
        g.parents_[ctx] = parent.is_null() ? std::string{} : parent.get<std::string>();
    if (!g.parents_.count(g.root_))
        throw Error(ErrorKind::InvalidConfig, g.root_, "root context is not declared");
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& c : j.at("commands")) {
        CommandTemplate cmd;
        cmd.context = c.at("context").get<std::string>();
        cmd.text = c.at("text").get<std::string>();
        if (!g.parents_.count(cmd.context))
            throw Error(ErrorKind::InvalidConfig, cmd.context, "command '" + cmd.text + "' in undeclared context");
        if (c.contains("enters")) {
            cmd.enters = c.at("enters").get<std::string>();
            if (!g.parents_.count(*cmd.enters))
                throw Error(ErrorKind::InvalidConfig, *cmd.enters, "command enters undeclared context");
        }
        cmd.exits = c.value("exits", false);
        cmd.negatable = c.value("negatable", true);
        for (const auto& w : text::words(cmd.text)) {
            CommandTemplate::Token t;
            if (w.size() > 2 && w.front() == '<' && w.back() == '>') {
                t.literal = false;
                t.slot = SlotType::parse(w.substr(1, w.size() - 2));
                t.text = w;
            } else {
                t.text = text::to_lower(w);
            }
            cmd.tokens.push_back(std::move(t));
        }
        if (!seen.insert({cmd.context, cmd.text}).second)
            throw Error(ErrorKind::InvalidConfig, cmd.text, "duplicate command template in " + cmd.context);
        g.commands_.push_back(std::move(cmd));
    }
    return g;
}

CliGrammar CliGrammar::defaults(const std::optional<std::filesystem::path>& data_dir)
{
    return from_json(load_json_data("testbed/cli_grammar.json", data_dir));
}

std::optional<std::string> CliGrammar::normalize(const std::string& raw) const
{
    auto line = text::collapse_whitespace(raw);
    if (line.empty())
        return std::nullopt;
    for (const auto& p : comment_prefixes_)
        if (line.rfind(p, 0) == 0)
            return std::nullopt;
    return line;
}

std::vector<std::string> CliGrammar::chain(const std::string& context) const
{
    std::vector<std::string> out;
    std::string c = context;
    std::set<std::string> guard;
    while (!c.empty() && guard.insert(c).second) {
        out.push_back(c);
        auto it = parents_.find(c);
        c = it == parents_.end() ? std::string{} : it->second;
    }
    return out;
}

CliGrammar::Match CliGrammar::match(const CommandTemplate& cmd, const std::vector<std::string>& words,
                                    const TestbedProfile* profile, std::string& why) const
{
    std::size_t wi = 0;
    std::string bad;
    for (const auto& t : cmd.tokens) {
        if (wi >= words.size())
            return bad.empty() ? Match::incomplete : Match::none;
        if (t.literal) {
            if (text::to_lower(words[wi]) != t.text)
                return Match::none;
            ++wi;
            continue;
        }
        if (t.slot.kind == "line") {
            wi = words.size();
            continue;
        }
        if (auto err = check_slot(t.slot, words[wi], profile); err && bad.empty())
            bad = *err;
        ++wi;
    }
    if (wi != words.size())
        return Match::none;
    if (!bad.empty()) {
        why = bad;
        return Match::bad_slot;
    }
    return Match::full;
}

ParseOutcome CliGrammar::parse(const std::string& line, const std::string& context, const TestbedProfile* profile) const
{
    ParseOutcome out;
    out.normalized = line;
    out.context_after = context;
    auto words = text::words(line);
    if (words.empty()) {
        out.detail = "unknown command";
        return out;
    }
    auto ctx_chain = chain(context);
    std::string why;

    auto exit_target = [&](const CommandTemplate& cmd) {
        if (text::to_lower(cmd.text) == "end")
            return root_;
        if (cmd.exits) {
            auto it = parents_.find(cmd.context);
            return it == parents_.end() || it->second.empty() ? root_ : it->second;
        }
        return cmd.enters ? *cmd.enters : cmd.context;
    };

    for (const auto& ctx : ctx_chain) {
        std::vector<const CommandTemplate*> full;
        for (const auto& cmd : commands_)
            if (cmd.context == ctx && match(cmd, words, profile, why) == Match::full)
                full.push_back(&cmd);
        if (full.size() > 1) {
            out.detail = "ambiguous";
            return out;
        }
        if (full.size() == 1) {
            out.accepted = true;
            out.context_after = exit_target(*full.front());
            return out;
        }
    }

    if (words.size() > 1 && text::to_lower(words[0]) == "no") {
        std::vector<std::string> rest(words.begin() + 1, words.end());
        for (const auto& ctx : ctx_chain) {
            for (const auto& cmd : commands_) {
                if (cmd.context != ctx || !cmd.negatable)
                    continue;
                bool ok = match(cmd, rest, profile, why) == Match::full;
                if (!ok && rest.size() < cmd.tokens.size()) {
                    ok = true;
                    for (std::size_t i = 0; i < rest.size() && ok; ++i)
                        ok = cmd.tokens[i].literal && cmd.tokens[i].text == text::to_lower(rest[i]);
                }
                if (ok) {
                    out.accepted = true;
                    out.context_after = cmd.context;
                    return out;
                }
            }
        }
    }

    for (const auto& cmd : commands_) {
        if (std::find(ctx_chain.begin(), ctx_chain.end(), cmd.context) != ctx_chain.end())
            continue;
        if (match(cmd, words, profile, why) == Match::full) {
            out.detail = "invalid in current context";
            return out;
        }
    }

    bool incomplete = false;
    for (const auto& ctx : ctx_chain) {
        for (const auto& cmd : commands_) {
            if (cmd.context != ctx)
                continue;
            std::string reason;
            auto m = match(cmd, words, profile, reason);
            if (m == Match::bad_slot) {
                out.detail = "invalid parameter: " + reason;
                return out;
            }
            if (m == Match::incomplete)
                incomplete = true;
        }
    }
    out.detail = incomplete ? "incomplete command" : "unknown command";
    return out;
}

// ---------------------------------------------------------------------------

TesterApiRegistry TesterApiRegistry::from_json(const Json& j)
{
    TesterApiRegistry r;
    std::set<std::string> names;
    for (const auto& a : j.at("apis")) {
        ApiEntry e;
        e.name = a.at("name").get<std::string>();
        e.effect = a.value("effect", "");
        if (!names.insert(e.name).second)
            throw Error(ErrorKind::InvalidConfig, e.name, "duplicate tester API name");
        std::set<std::string> pnames;
        for (const auto& p : a.value("params", Json::array())) {
            ApiParam ap{p.at("name").get<std::string>(), SlotType::parse(p.at("type").get<std::string>()),
                        p.value("required", true)};
            if (!pnames.insert(ap.name).second)
                throw Error(ErrorKind::InvalidConfig, e.name, "duplicate parameter " + ap.name);
            e.params.push_back(std::move(ap));
        }
        r.entries_.push_back(std::move(e));
    }
    for (const auto& c : j.value("checks", Json::array())) {
        CheckEntry ce;
        ce.name = c.at("name").get<std::string>();
        auto mode = c.value("mode", "expect");
        if (mode == "config_has")
            ce.mode = CheckMode::config_has;
        else if (mode == "called")
            ce.mode = CheckMode::called;
        else if (mode == "expect")
            ce.mode = CheckMode::expect;
        else
            throw Error(ErrorKind::InvalidConfig, ce.name, "unknown check mode " + mode);
        ce.description = c.value("description", "");
        if (!names.insert(ce.name).second)
            throw Error(ErrorKind::InvalidConfig, ce.name, "duplicate check name");
        r.checks_.push_back(std::move(ce));
    }
    return r;
}

TesterApiRegistry TesterApiRegistry::defaults(const std::optional<std::filesystem::path>& data_dir)
{
    return from_json(load_json_data("testbed/tester_api.json", data_dir));
}

const ApiEntry* TesterApiRegistry::find(const std::string& name) const
{
    auto it = std::find_if(entries_.begin(), entries_.end(), [&](const ApiEntry& e) { return e.name == name; });
    return it == entries_.end() ? nullptr : &*it;
}

const CheckEntry* TesterApiRegistry::find_check(const std::string& name) const
{
    auto it = std::find_if(checks_.begin(), checks_.end(), [&](const CheckEntry& e) { return e.name == name; });
    return it == checks_.end() ? nullptr : &*it;
}

// ---------------------------------------------------------------------------

std::vector<ScriptStep> parse_script(const std::vector<std::string>& lines)
{
    static const std::regex call_re(R"((?:^|[^\w.])(?:tester|api)\.(\w+)\s*\((.*)\)\s*;?\s*$)");
    static const std::regex assert_re(R"((?:^|[^\w.])(?:expect|check|verify)\.(\w+)\s*\((.*)\)\s*;?\s*$)");
    std::vector<ScriptStep> steps;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        auto line = text::trim_copy(lines[i]);
        if (line.empty() || line[0] == '#' || line.rfind("//", 0) == 0 || line[0] == '!')
            continue;
        ScriptStep step;
        step.line = i + 1;
        std::size_t positional = 0;
        auto head_end = line.find_first_of(" \t");
        auto head = line.substr(0, head_end);
        if ((head == "call" || head == "assert") && head_end != std::string::npos) {
            step.kind = head == "call" ? ScriptStep::Kind::call : ScriptStep::Kind::assertion;
            auto parts = shell_split(line.substr(head_end + 1));
            if (parts.empty())
                continue;
            step.name = parts[0];
            for (std::size_t p = 1; p < parts.size(); ++p)
                push_arg(step, parts[p], positional);
        } else {
            std::smatch m;
            if (std::regex_search(line, m, call_re))
                step.kind = ScriptStep::Kind::call;
            else if (std::regex_search(line, m, assert_re))
                step.kind = ScriptStep::Kind::assertion;
            else
                continue;
            step.name = m[1].str();
            for (const auto& a : split_args(m[2].str()))
                push_arg(step, a, positional);
        }
        step.text = line;
        steps.push_back(std::move(step));
    }
    return steps;
}

std::string canonical_call(const ScriptStep& step)
{
    std::string out = step.name;
    for (const auto& [k, v] : step.args) {
        auto value = v.find(' ') != std::string::npos ? "\"" + v + "\"" : v;
        out += " " + (k.rfind('_', 0) == 0 && std::all_of(k.begin() + 1, k.end(), ::isdigit) ? value : k + "=" + value);
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

FaultTarget target_from_string(const std::string& s)
{
    if (s == "config")
        return FaultTarget::config;
    if (s == "call")
        return FaultTarget::call;
    if (s == "assert" || s == "assertion")
        return FaultTarget::assertion;
    throw Error(ErrorKind::InvalidConfig, s, "fault target must be config, call or assert");
}

std::string target_name(FaultTarget t)
{
    switch (t) {
    case FaultTarget::config: return "config";
    case FaultTarget::call: return "call";
    case FaultTarget::assertion: return "assert";
    }
    return "config";
}

} // namespace

FaultProfile FaultProfile::from_json(const Json& j)
{
    FaultProfile p;
    p.name = j.value("name", "");
    std::set<std::string> triggers;
    for (const auto& f : j.at("faults")) {
        InjectedFault fault;
        fault.target = target_from_string(f.at("target").get<std::string>());
        if (f.contains("pattern"))
            fault.pattern = f.at("pattern").get<std::string>();
        if (f.contains("ordinal"))
            fault.ordinal = f.at("ordinal").get<std::size_t>();
        if (!fault.pattern && !fault.ordinal)
            throw Error(ErrorKind::InvalidConfig, p.name, "fault needs a pattern or an ordinal");
        auto ev = event_kind_from_string(f.value("event", fault.target == FaultTarget::config ? "config_reject"
                                                           : fault.target == FaultTarget::call ? "api_error"
                                                                                               : "assertion_fail"));
        if (!ev || !is_failure(*ev))
            throw Error(ErrorKind::InvalidConfig, p.name, "injected event must be a failure kind");
        fault.event = *ev;
        fault.detail = f.value("detail", "injected fault");
        if (f.contains("max_hits"))
            fault.max_hits = f.at("max_hits").get<int>();
        if (fault.pattern)
            fault.compiled = std::regex(*fault.pattern, std::regex::icase);
        auto key = target_name(fault.target) + "|" + (fault.pattern ? "p:" + *fault.pattern : "") +
                   (fault.ordinal ? "o:" + std::to_string(*fault.ordinal) : "");
        if (!triggers.insert(key).second)
            throw Error(ErrorKind::InvalidConfig, p.name, "fault triggers overlap: " + key);
        p.faults.push_back(std::move(fault));
    }
    return p;
}

FaultProfile FaultProfile::load(const std::filesystem::path& path) { return from_json(io::read_json(path)); }

Json FaultProfile::to_json() const
{
    Json arr = Json::array();
    for (const auto& f : faults) {
        Json j = {{"target", target_name(f.target)}, {"event", to_string(f.event)}, {"detail", f.detail}};
        if (f.pattern)
            j["pattern"] = *f.pattern;
        if (f.ordinal)
            j["ordinal"] = *f.ordinal;
        if (f.max_hits)
            j["max_hits"] = *f.max_hits;
        arr.push_back(j);
    }
    return {{"name", name}, {"faults", arr}};
}

Json ExecutableArtifact::to_json() const
{
    return {{"case_id", case_id}, {"tester_script", tester_script}, {"dut_config", dut_config}};
}

ExecutableArtifact ExecutableArtifact::from_json(const Json& j)
{
    ExecutableArtifact a;
    a.case_id = j.value("case_id", "");
    a.tester_script = j.value("tester_script", std::vector<std::string>{});
    a.dut_config = j.value("dut_config", std::vector<std::string>{});
    return a;
}

// ---------------------------------------------------------------------------

Session::Session(CliGrammar grammar, TesterApiRegistry registry, TestbedProfile profile,
                 std::optional<FaultProfile> faults)
    : grammar_(std::move(grammar)), registry_(std::move(registry)), profile_(std::move(profile))
{
    set_faults(std::move(faults));
}

void Session::set_faults(std::optional<FaultProfile> faults)
{
    faults_ = std::move(faults);
    hits_.assign(faults_ ? faults_->faults.size() : 0, 0);
}

void Session::reset()
{
    running_.clear();
    called_.clear();
}

const InjectedFault* Session::trigger(FaultTarget target, const std::string& text, std::size_t ordinal)
{
    if (!faults_)
        return nullptr;
    for (std::size_t i = 0; i < faults_->faults.size(); ++i) {
        const auto& f = faults_->faults[i];
        if (f.target != target)
            continue;
        if (f.max_hits && hits_[i] >= *f.max_hits)
            continue;
        if (f.ordinal && *f.ordinal != ordinal)
            continue;
        if (f.pattern && !std::regex_search(text, f.compiled))
            continue;
        ++hits_[i];
        return &f;
    }
    return nullptr;
}

ExecutionLog Session::apply_config(const std::vector<std::string>& lines)
{
    ExecutionLog log;
    std::string context = grammar_.root_context();
    std::size_t ordinal = 0;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        auto norm = grammar_.normalize(lines[i]);
        if (!norm)
            continue;
        ++ordinal;
        Event e;
        e.line = i + 1;
        e.line_or_call = *norm;
        if (const auto* f = trigger(FaultTarget::config, *norm, ordinal)) {
            e.kind = f->event;
            e.detail = f->detail;
            log.events.push_back(std::move(e));
            continue;
        }
        auto outcome = grammar_.parse(*norm, context, &profile_);
        if (outcome.accepted) {
            e.kind = EventKind::config_accept;
            context = outcome.context_after;
            running_.push_back(*norm);
        } else {
            e.kind = EventKind::config_reject;
            e.detail = outcome.detail;
        }
        log.events.push_back(std::move(e));
    }
    return log;
}

ScriptResult Session::run_script(const std::vector<std::string>& lines)
{
    ScriptResult res;
    auto steps = parse_script(lines);
    std::size_t call_n = 0, assert_n = 0;
    for (const auto& step : steps) {
        Event e;
        e.line = step.line;
        if (step.kind == ScriptStep::Kind::call) {
            ++call_n;
            e.line_or_call = canonical_call(step);
            if (const auto* f = trigger(FaultTarget::call, e.line_or_call, call_n)) {
                e.kind = f->event;
                e.detail = f->detail;
                res.log.events.push_back(std::move(e));
                continue;
            }
            const auto* api = registry_.find(step.name);
            if (!api) {
                e.kind = EventKind::api_error;
                e.detail = "unsupported command: " + step.name;
                res.log.events.push_back(std::move(e));
                continue;
            }
            std::map<std::string, std::string> bound;
            std::string err;
            std::size_t next_pos = 0;
            for (const auto& [k, v] : step.args) {
                bool positional = k.rfind('_', 0) == 0 && k.size() > 1 &&
                                  std::all_of(k.begin() + 1, k.end(), ::isdigit);
                std::string name = k;
                if (positional) {
                    while (next_pos < api->params.size() && bound.count(api->params[next_pos].name))
                        ++next_pos;
                    if (next_pos >= api->params.size()) {
                        err = "invalid argument: too many arguments";
                        break;
                    }
                    name = api->params[next_pos++].name;
                }
                auto pit = std::find_if(api->params.begin(), api->params.end(),
                                        [&](const ApiParam& p) { return p.name == name; });
                if (pit == api->params.end()) {
                    err = "invalid argument: unknown parameter " + name;
                    break;
                }
                if (bound.count(name)) {
                    err = "invalid argument: " + name + " given twice";
                    break;
                }
                if (auto why = check_slot(pit->type, v, &profile_)) {
                    err = "invalid argument: " + name + ": " + *why;
                    break;
                }
                bound[name] = v;
            }
            if (err.empty())
                for (const auto& p : api->params)
                    if (p.required && !bound.count(p.name)) {
                        err = "missing argument: " + p.name;
                        break;
                    }
            if (!err.empty()) {
                e.kind = EventKind::api_error;
                e.detail = err;
                res.log.events.push_back(std::move(e));
                continue;
            }
            std::string canon = api->name;
            for (const auto& p : api->params)
                if (bound.count(p.name)) {
                    const auto& v = bound[p.name];
                    canon += " " + p.name + "=" + (v.find(' ') != std::string::npos ? "\"" + v + "\"" : v);
                }
            e.kind = EventKind::api_call;
            e.line_or_call = canon;
            res.calls.push_back(canon);
            called_.push_back(api->name);
            res.log.events.push_back(std::move(e));
            continue;
        }

        ++assert_n;
        e.line_or_call = canonical_call(step);
        if (const auto* f = trigger(FaultTarget::assertion, e.line_or_call, assert_n)) {
            e.kind = f->event;
            e.detail = f->detail;
            res.log.events.push_back(std::move(e));
            continue;
        }
        const auto* check = registry_.find_check(step.name);
        if (!check) {
            e.kind = EventKind::api_error;
            e.detail = "unsupported command: check " + step.name;
            res.log.events.push_back(std::move(e));
            continue;
        }
        std::string arg;
        if (!step.args.empty())
            arg = step.args.front().second;
        switch (check->mode) {
        case CheckMode::config_has: {
            auto want = grammar_.normalize(arg);
            bool ok = want && std::find(running_.begin(), running_.end(), *want) != running_.end();
            e.kind = ok ? EventKind::assertion_pass : EventKind::assertion_fail;
            e.detail = ok ? "config line present" : "config line not present: " + arg;
            break;
        }
        case CheckMode::called: {
            bool ok = std::find(called_.begin(), called_.end(), arg) != called_.end();
            e.kind = ok ? EventKind::assertion_pass : EventKind::assertion_fail;
            e.detail = ok ? "api called" : "api not called: " + arg;
            break;
        }
        case CheckMode::expect:
            e.kind = EventKind::assertion_pass;
            e.detail = "expectation met";
            break;
        }
        res.log.events.push_back(std::move(e));
    }
    if (assert_n == 0) {
        Event e;
        e.kind = EventKind::assertion_fail;
        e.detail = "script has no assertions";
        res.log.events.push_back(std::move(e));
    }
    return res;
}

ExecutionLog Session::execute(const ExecutableArtifact& artifact)
{
    reset();
    ++executions_;
    auto log = apply_config(artifact.dut_config);
    log.append(run_script(artifact.tester_script).log);
    return log;
}

Session default_session(std::optional<FaultProfile> faults, const std::optional<std::filesystem::path>& data_dir)
{
    return Session(CliGrammar::defaults(data_dir), TesterApiRegistry::defaults(data_dir),
                   TestbedProfile::defaults(data_dir), std::move(faults));
}

} // namespace conformgen::testbed
