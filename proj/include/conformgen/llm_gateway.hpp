#pragma once

#include "conformgen/data.hpp"
#include "conformgen/error.hpp"

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace conformgen::llm {

// ---------------------------------------------------------------------------
// Templates

/// Slots are written `{name}`; `{{` and `}}` produce literal braces. Any other
/// brace (e.g. inside a JSON sample) is copied through unchanged.
class PromptTemplate {
  public:
    PromptTemplate() = default;
    PromptTemplate(std::string template_id, std::string body);

    const std::string& id() const { return id_; }
    const std::string& body() const { return body_; }
    const std::set<std::string>& required_slots() const { return slots_; }

    std::string render(const std::map<std::string, std::string>& bindings) const;

    /// Loads prompts/<id>.txt (embedded or from `data_dir`).
    static PromptTemplate load(const std::string& template_id,
                               const std::optional<std::filesystem::path>& data_dir = {});

  private:
    std::string id_;
    std::string body_;
    std::set<std::string> slots_;
};

std::string render(const PromptTemplate& tmpl, const std::map<std::string, std::string>& bindings);

// ---------------------------------------------------------------------------
// Output schemas

/// A JSON-Schema subset: type, required, properties, items, enum, minimum,
/// maximum, minItems, minLength. Unknown properties are preserved and accepted.
std::vector<std::string> validate(const Json& value, const Json& schema, const std::string& path = "$");

/// Pull the first JSON document out of model text (tolerates code fences and prose).
std::optional<Json> extract_json(const std::string& response);

// ---------------------------------------------------------------------------
// Backends

enum class BackendMode { live, replay, record };

struct BackendDescriptor {
    BackendMode mode = BackendMode::replay;
    std::optional<std::string> endpoint;
    std::string model_name = "default";
    std::optional<std::filesystem::path> transcript_path;
    double temperature = 0.0;
    /// Environment variable holding the bearer key for live mode.
    std::string api_key_env = "CONFORMGEN_API_KEY";

    void validate() const;
    static BackendDescriptor from_json(const Json& j);
    Json to_json() const;
};

std::string to_string(BackendMode mode);
BackendMode backend_mode_from_string(const std::string& s);

struct Exchange {
    std::string request_hash;
    std::string prompt;
    std::string response;
    std::string timestamp;

    Json to_json() const;
    static Exchange from_json(const Json& j);
};

/// Digest of the whitespace-collapsed prompt.
std::string request_hash(const std::string& prompt);

class CompletionBackend {
  public:
    virtual ~CompletionBackend() = default;
    virtual std::string complete(const std::string& prompt) = 0;
};

/// std::function-backed backend, used for scripted responders.
class CallbackBackend : public CompletionBackend {
  public:
    using Fn = std::function<std::string(const std::string&)>;
    explicit CallbackBackend(Fn fn) : fn_(std::move(fn)) {}
    std::string complete(const std::string& prompt) override { return fn_(prompt); }

  private:
    Fn fn_;
};

/// Returns recorded responses by request hash; duplicate hashes are served in
/// recorded order.
class ReplayBackend : public CompletionBackend {
  public:
    explicit ReplayBackend(std::vector<Exchange> exchanges);
    static std::shared_ptr<ReplayBackend> from_file(const std::filesystem::path& path);
    std::string complete(const std::string& prompt) override;
    std::size_t remaining() const;

  private:
    mutable std::mutex mu_;
    std::map<std::string, std::vector<std::string>> responses_;
    std::map<std::string, std::size_t> cursor_;
};

/// Forwards to `inner` and appends every exchange to a JSONL transcript.
class RecordingBackend : public CompletionBackend {
  public:
    RecordingBackend(std::shared_ptr<CompletionBackend> inner, std::filesystem::path transcript_path,
                     bool truncate = true);
    std::string complete(const std::string& prompt) override;

  private:
    std::shared_ptr<CompletionBackend> inner_;
    std::filesystem::path path_;
    std::mutex mu_;
};

/// Chat-completion over HTTP: POST {"model", "messages":[{"role":"user",...}],
/// "temperature"} and read choices[0].message.content.
class HttpChatBackend : public CompletionBackend {
  public:
    HttpChatBackend(std::string endpoint, std::string model_name, double temperature, std::string api_key);
    std::string complete(const std::string& prompt) override;

    static Json request_body(const std::string& model, const std::string& prompt, double temperature);
    static std::string parse_response(const std::string& body);

  private:
    std::string endpoint_;
    std::string model_;
    double temperature_;
    std::string api_key_;
};

/// Builds the backend for a descriptor. Record mode wraps `record_inner` when
/// provided, otherwise a live HTTP backend.
std::shared_ptr<CompletionBackend> make_backend(const BackendDescriptor& desc,
                                                std::shared_ptr<CompletionBackend> record_inner = nullptr);

// ---------------------------------------------------------------------------
// Gateway

struct StructuredResult {
    Json value;
    int repairs = 0;
    int calls = 0;
};

using ExtraValidator = std::function<std::vector<std::string>(const Json&)>;

class Gateway {
  public:
    explicit Gateway(std::shared_ptr<CompletionBackend> backend, int default_max_repairs = 3);

    std::string complete(const std::string& prompt);

    /// Validates the response against `schema` (plus `extra`); on failure the
    /// prompt is re-sent with the validation errors appended, at most
    /// `max_repairs` times. Throws SchemaViolation when repairs run out.
    StructuredResult complete_structured(const std::string& prompt, const Json& schema,
                                         std::optional<int> max_repairs = std::nullopt,
                                         const ExtraValidator& extra = {});

    std::size_t calls() const { return calls_.load(); }
    int default_max_repairs() const { return default_max_repairs_; }

  private:
    std::shared_ptr<CompletionBackend> backend_;
    int default_max_repairs_;
    std::atomic<std::size_t> calls_{0};
};

} // namespace conformgen::llm
