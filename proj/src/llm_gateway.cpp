#include "conformgen/llm_gateway.hpp"

#include "conformgen/text.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace conformgen::llm {

namespace {

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

/// Visits the template: literal text via `lit`, slot names via `slot`.
template <typename Lit, typename Slot>
void scan_template(const std::string& body, Lit&& lit, Slot&& slot)
{
    std::size_t i = 0;
    while (i < body.size()) {
        char c = body[i];
        if (c == '{' && i + 1 < body.size() && body[i + 1] == '{') {
            lit('{');
            i += 2;
            continue;
        }
        if (c == '}' && i + 1 < body.size() && body[i + 1] == '}') {
            lit('}');
            i += 2;
            continue;
        }
        if (c == '{' && i + 1 < body.size() && is_ident_start(body[i + 1])) {
            std::size_t j = i + 1;
            while (j < body.size() && is_ident(body[j]))
                ++j;
            if (j < body.size() && body[j] == '}') {
                slot(body.substr(i + 1, j - i - 1));
                i = j + 1;
                continue;
            }
        }
        lit(c);
        ++i;
    }
}

std::string utc_timestamp()
{
    auto now = std::chrono::system_clock::now();
    auto t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream ss;
    ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return ss.str();
}

std::string type_of(const Json& v)
{
    if (v.is_null())
        return "null";
    if (v.is_boolean())
        return "boolean";
    if (v.is_number_integer() || v.is_number_unsigned())
        return "integer";
    if (v.is_number())
        return "number";
    if (v.is_string())
        return "string";
    if (v.is_array())
        return "array";
    return "object";
}

bool type_matches(const Json& v, const std::string& type)
{
    auto t = type_of(v);
    if (type == t)
        return true;
    if (type == "number" && t == "integer")
        return true;
    // Models often emit 80.0 for an integer field.
    if (type == "integer" && v.is_number_float())
        return v.get<double>() == static_cast<double>(static_cast<long long>(v.get<double>()));
    return false;
}

} // namespace

// ---------------------------------------------------------------------------

PromptTemplate::PromptTemplate(std::string template_id, std::string body) : id_(std::move(template_id)), body_(std::move(body))
{
    scan_template(body_, [](char) {}, [this](const std::string& name) { slots_.insert(name); });
}

std::string PromptTemplate::render(const std::map<std::string, std::string>& bindings) const
{
    for (const auto& s : slots_) {
        if (!bindings.count(s))
            throw Error(ErrorKind::MissingSlot, s, "template " + id_ + " requires slot '" + s + "'");
    }
    std::string out;
    out.reserve(body_.size() * 2);
    scan_template(body_, [&](char c) { out.push_back(c); }, [&](const std::string& name) { out += bindings.at(name); });
    return out;
}

PromptTemplate PromptTemplate::load(const std::string& template_id, const std::optional<std::filesystem::path>& data_dir)
{
    return PromptTemplate(template_id, load_data("prompts/" + template_id + ".txt", data_dir));
}

std::string render(const PromptTemplate& tmpl, const std::map<std::string, std::string>& bindings)
{
    return tmpl.render(bindings);
}

// ---------------------------------------------------------------------------

std::vector<std::string> validate(const Json& value, const Json& schema, const std::string& path)
{
    std::vector<std::string> errors;
    if (schema.contains("type")) {
        auto type = schema.at("type").get<std::string>();
        if (!type_matches(value, type)) {
            errors.push_back(path + ": expected " + type + ", got " + type_of(value));
            return errors;
        }
    }
    if (schema.contains("enum")) {
        const auto& options = schema.at("enum");
        if (std::find(options.begin(), options.end(), value) == options.end())
            errors.push_back(path + ": value " + value.dump() + " not in " + options.dump());
    }
    if (value.is_number()) {
        double v = value.get<double>();
        if (schema.contains("minimum") && v < schema.at("minimum").get<double>())
            errors.push_back(path + ": " + value.dump() + " below minimum " + schema.at("minimum").dump());
        if (schema.contains("maximum") && v > schema.at("maximum").get<double>())
            errors.push_back(path + ": " + value.dump() + " above maximum " + schema.at("maximum").dump());
    }
    if (value.is_string() && schema.contains("minLength") &&
        value.get<std::string>().size() < schema.at("minLength").get<std::size_t>())
        errors.push_back(path + ": string shorter than " + schema.at("minLength").dump());
    if (value.is_array()) {
        if (schema.contains("minItems") && value.size() < schema.at("minItems").get<std::size_t>())
            errors.push_back(path + ": expected at least " + schema.at("minItems").dump() + " items");
        if (schema.contains("items")) {
            for (std::size_t i = 0; i < value.size(); ++i) {
                auto sub = validate(value[i], schema.at("items"), path + "[" + std::to_string(i) + "]");
                errors.insert(errors.end(), sub.begin(), sub.end());
            }
        }
    }
    if (value.is_object()) {
        for (const auto& req : schema.value("required", Json::array())) {
            if (!value.contains(req.get<std::string>()))
                errors.push_back(path + ": missing required field '" + req.get<std::string>() + "'");
        }
        if (schema.contains("properties")) {
            for (const auto& [name, sub_schema] : schema.at("properties").items()) {
                if (!value.contains(name))
                    continue;
                auto sub = validate(value.at(name), sub_schema, path + "." + name);
                errors.insert(errors.end(), sub.begin(), sub.end());
            }
        }
        if (schema.contains("additionalProperties") && schema.at("additionalProperties").is_object()) {
            for (const auto& [name, v] : value.items()) {
                if (schema.contains("properties") && schema.at("properties").contains(name))
                    continue;
                auto sub = validate(v, schema.at("additionalProperties"), path + "." + name);
                errors.insert(errors.end(), sub.begin(), sub.end());
            }
        }
    }
    return errors;
}

std::optional<Json> extract_json(const std::string& response)
{
    auto trimmed = text::trim_copy(response);
    try {
        return Json::parse(trimmed);
    } catch (const Json::parse_error&) {
    }
    // Scan for the first balanced {...} or [...] that parses.
    for (std::size_t start = 0; start < trimmed.size(); ++start) {
        char open = trimmed[start];
        if (open != '{' && open != '[')
            continue;
        char close = open == '{' ? '}' : ']';
        int depth = 0;
        bool in_string = false;
        for (std::size_t i = start; i < trimmed.size(); ++i) {
            char c = trimmed[i];
            if (in_string) {
                if (c == '\\')
                    ++i;
                else if (c == '"')
                    in_string = false;
                continue;
            }
            if (c == '"')
                in_string = true;
            else if (c == open)
                ++depth;
            else if (c == close && --depth == 0) {
                try {
                    return Json::parse(trimmed.substr(start, i - start + 1));
                } catch (const Json::parse_error&) {
                    break;
                }
            }
        }
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------

std::string to_string(BackendMode mode)
{
    switch (mode) {
    case BackendMode::live: return "live";
    case BackendMode::replay: return "replay";
    case BackendMode::record: return "record";
    }
    return "replay";
}

BackendMode backend_mode_from_string(const std::string& s)
{
    if (s == "live")
        return BackendMode::live;
    if (s == "replay")
        return BackendMode::replay;
    if (s == "record")
        return BackendMode::record;
    throw Error(ErrorKind::InvalidConfig, s, "unknown backend mode '" + s + "'");
}

void BackendDescriptor::validate() const
{
    if ((mode == BackendMode::replay || mode == BackendMode::record) && !transcript_path)
        throw Error(ErrorKind::InvalidConfig, to_string(mode), to_string(mode) + " mode requires transcript_path");
    if (mode == BackendMode::live && (!endpoint || endpoint->empty()))
        throw Error(ErrorKind::InvalidConfig, "live", "live mode requires endpoint");
}

BackendDescriptor BackendDescriptor::from_json(const Json& j)
{
    BackendDescriptor d;
    d.mode = backend_mode_from_string(j.value("mode", std::string("replay")));
    if (j.contains("endpoint") && j.at("endpoint").is_string())
        d.endpoint = j.at("endpoint").get<std::string>();
    d.model_name = j.value("model_name", d.model_name);
    if (j.contains("transcript_path") && j.at("transcript_path").is_string())
        d.transcript_path = j.at("transcript_path").get<std::string>();
    d.temperature = j.value("temperature", 0.0);
    d.api_key_env = j.value("api_key_env", d.api_key_env);
    return d;
}

Json BackendDescriptor::to_json() const
{
    Json j = {{"mode", to_string(mode)}, {"model_name", model_name}, {"temperature", temperature}};
    if (endpoint)
        j["endpoint"] = *endpoint;
    if (transcript_path)
        j["transcript_path"] = transcript_path->string();
    j["api_key_env"] = api_key_env;
    return j;
}

Json Exchange::to_json() const
{
    return {{"request_hash", request_hash}, {"prompt", prompt}, {"response", response}, {"timestamp", timestamp}};
}

Exchange Exchange::from_json(const Json& j)
{
    Exchange e;
    e.prompt = j.value("prompt", "");
    e.request_hash = j.contains("request_hash") ? j.at("request_hash").get<std::string>() : llm::request_hash(e.prompt);
    e.response = j.at("response").get<std::string>();
    e.timestamp = j.value("timestamp", "");
    return e;
}

std::string request_hash(const std::string& prompt) { return text::sha256_hex(text::collapse_whitespace(prompt)); }

ReplayBackend::ReplayBackend(std::vector<Exchange> exchanges)
{
    for (auto& e : exchanges)
        responses_[e.request_hash].push_back(std::move(e.response));
}

std::shared_ptr<ReplayBackend> ReplayBackend::from_file(const std::filesystem::path& path)
{
    std::vector<Exchange> exchanges;
    for (const auto& j : io::read_jsonl(path))
        exchanges.push_back(Exchange::from_json(j));
    return std::make_shared<ReplayBackend>(std::move(exchanges));
}

std::string ReplayBackend::complete(const std::string& prompt)
{
    auto hash = request_hash(prompt);
    std::lock_guard lock(mu_);
    auto it = responses_.find(hash);
    if (it == responses_.end())
        throw Error(ErrorKind::ReplayMiss, hash, "no recorded response for prompt " + hash.substr(0, 12));
    auto& cur = cursor_[hash];
    if (cur >= it->second.size())
        throw Error(ErrorKind::ReplayMiss, hash,
                    "recorded responses for prompt " + hash.substr(0, 12) + " exhausted");
    return it->second[cur++];
}

std::size_t ReplayBackend::remaining() const
{
    std::lock_guard lock(mu_);
    std::size_t n = 0;
    for (const auto& [hash, list] : responses_) {
        auto it = cursor_.find(hash);
        n += list.size() - (it == cursor_.end() ? 0 : it->second);
    }
    return n;
}

RecordingBackend::RecordingBackend(std::shared_ptr<CompletionBackend> inner, std::filesystem::path transcript_path,
                                   bool truncate)
    : inner_(std::move(inner)), path_(std::move(transcript_path))
{
    if (path_.has_parent_path())
        std::filesystem::create_directories(path_.parent_path());
    if (truncate)
        std::ofstream(path_, std::ios::trunc);
}

std::string RecordingBackend::complete(const std::string& prompt)
{
    auto response = inner_->complete(prompt);
    Exchange e{request_hash(prompt), prompt, response, utc_timestamp()};
    std::lock_guard lock(mu_);
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out)
        throw Error(ErrorKind::Io, path_.string(), "cannot append to transcript " + path_.string());
    out << e.to_json().dump() << '\n';
    return response;
}

HttpChatBackend::HttpChatBackend(std::string endpoint, std::string model_name, double temperature, std::string api_key)
    : endpoint_(std::move(endpoint)), model_(std::move(model_name)), temperature_(temperature), api_key_(std::move(api_key))
{
}

Json HttpChatBackend::request_body(const std::string& model, const std::string& prompt, double temperature)
{
    return {{"model", model},
            {"messages", Json::array({{{"role", "user"}, {"content", prompt}}})},
            {"temperature", temperature}};
}

std::string HttpChatBackend::parse_response(const std::string& body)
{
    Json j;
    try {
        j = Json::parse(body);
    } catch (const Json::parse_error& e) {
        throw Error(ErrorKind::BackendUnavailable, "", std::string("unparseable completion response: ") + e.what());
    }
    try {
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const Json::exception&) {
        throw Error(ErrorKind::BackendUnavailable, "", "completion response lacks choices[0].message.content");
    }
}

std::string HttpChatBackend::complete(const std::string& prompt)
{
    auto scheme_end = endpoint_.find("://");
    auto path_start = endpoint_.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    std::string base = path_start == std::string::npos ? endpoint_ : endpoint_.substr(0, path_start);
    std::string path = path_start == std::string::npos ? "/" : endpoint_.substr(path_start);
    httplib::Client client(base);
    client.set_connection_timeout(30);
    client.set_read_timeout(600);
    httplib::Headers headers;
    if (!api_key_.empty())
        headers.emplace("Authorization", "Bearer " + api_key_);
    auto res = client.Post(path, headers, request_body(model_, prompt, temperature_).dump(), "application/json");
    if (!res)
        throw Error(ErrorKind::BackendUnavailable, endpoint_,
                    "request to " + endpoint_ + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200)
        throw Error(ErrorKind::BackendUnavailable, endpoint_,
                    "endpoint returned HTTP " + std::to_string(res->status));
    return parse_response(res->body);
}

std::shared_ptr<CompletionBackend> make_backend(const BackendDescriptor& desc,
                                                std::shared_ptr<CompletionBackend> record_inner)
{
    auto live = [&]() -> std::shared_ptr<CompletionBackend> {
        if (!desc.endpoint)
            throw Error(ErrorKind::InvalidConfig, "live", "live backend requires endpoint");
        const char* key = std::getenv(desc.api_key_env.c_str());
        return std::make_shared<HttpChatBackend>(*desc.endpoint, desc.model_name, desc.temperature, key ? key : "");
    };
    switch (desc.mode) {
    case BackendMode::live:
        desc.validate();
        return live();
    case BackendMode::replay:
        desc.validate();
        return ReplayBackend::from_file(*desc.transcript_path);
    case BackendMode::record:
        if (!desc.transcript_path)
            throw Error(ErrorKind::InvalidConfig, "record", "record mode requires transcript_path");
        return std::make_shared<RecordingBackend>(record_inner ? record_inner : live(), *desc.transcript_path);
    }
    throw Error(ErrorKind::InvalidConfig, "unknown backend mode");
}

// ---------------------------------------------------------------------------

Gateway::Gateway(std::shared_ptr<CompletionBackend> backend, int default_max_repairs)
    : backend_(std::move(backend)), default_max_repairs_(default_max_repairs)
{
    if (!backend_)
        throw Error(ErrorKind::BackendUnavailable, "gateway has no backend");
}

std::string Gateway::complete(const std::string& prompt)
{
    ++calls_;
    return backend_->complete(prompt);
}

StructuredResult Gateway::complete_structured(const std::string& prompt, const Json& schema,
                                              std::optional<int> max_repairs, const ExtraValidator& extra)
{
    int limit = max_repairs.value_or(default_max_repairs_);
    if (limit < 0)
        throw Error(ErrorKind::PreconditionViolation, "max_repairs", "max_repairs must be >= 0");
    StructuredResult result;
    std::string current = prompt;
    std::vector<std::string> errors;
    for (int attempt = 0; attempt <= limit; ++attempt) {
        auto response = complete(current);
        ++result.calls;
        errors.clear();
        auto parsed = extract_json(response);
        if (!parsed) {
            errors.push_back("$: response is not a JSON document");
        } else {
            errors = validate(*parsed, schema);
            if (errors.empty() && extra)
                errors = extra(*parsed);
        }
        if (errors.empty()) {
            result.value = std::move(*parsed);
            result.repairs = attempt;
            return result;
        }
        current = prompt + "\n\n<validation_feedback>\nYour previous response did not satisfy the output format:\n";
        for (const auto& e : errors)
            current += "- " + e + "\n";
        current += "Reply with a single JSON document that strictly follows the output template.\n</validation_feedback>";
    }
    throw Error(ErrorKind::SchemaViolation, text::join(errors, "; "),
                "response failed schema validation after " + std::to_string(limit + 1) +
                    " attempts: " + text::join(errors, "; "));
}

} // namespace conformgen::llm
