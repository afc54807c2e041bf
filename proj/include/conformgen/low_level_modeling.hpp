#pragma once

#include "conformgen/error.hpp"
#include "conformgen/high_level_analysis.hpp"
#include "conformgen/llm_gateway.hpp"
#include "conformgen/spec_ingest.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace conformgen::modeling {

struct FieldSpec {
    std::string field_name;
    std::optional<int> offset_bits;
    std::optional<int> width_bits;
    /// Used when the position is not numeric ("after the last TLV").
    std::string symbolic_position;
    std::string value_constraints;
    std::string expected_response;
    std::vector<std::string> source_sections;

    Json to_json() const;
    static FieldSpec from_json(const Json& j);
};

struct PacketModel {
    std::vector<FieldSpec> fields;
    /// Every round came back empty.
    bool flagged_empty = false;
};

struct FsmState {
    std::string name;
    std::string description;
    bool inferred = false;
};

struct FsmTransition {
    std::string source;
    std::string target;
    std::string event;
    std::string action;
    std::vector<std::string> constraints;
    std::vector<std::string> source_sections;

    bool operator==(const FsmTransition&) const = default;
    Json to_json() const;
    static FsmTransition from_json(const Json& j);
};

struct FsmModel {
    std::vector<FsmState> states;
    std::vector<FsmTransition> transitions;

    bool has_state(const std::string& name) const;
};

struct MessageStep {
    std::string step_id;
    std::string sender_role;
    std::string receiver_role;
    std::string message_type;
    /// Ids of steps that must come before this one.
    std::vector<std::string> ordering_constraints;
    std::string expected_response;
    std::vector<std::string> source_sections;

    Json to_json() const;
    static MessageStep from_json(const Json& j);
};

struct SequenceModel {
    std::vector<MessageStep> steps;
};

enum class PointOrigin { field, fsm, time_sequence, protocol_specific };

std::string to_string(PointOrigin o);
std::optional<PointOrigin> origin_from_string(const std::string& s);

struct TestingPoint {
    std::string point_id;
    std::string module_name;
    std::string title;
    std::string objective;
    Json parameters = Json::object();
    std::vector<std::string> reference_sections;
    PointOrigin origin = PointOrigin::protocol_specific;
    std::vector<std::string> additional_tools_required;

    Json to_json() const;
    static TestingPoint from_json(const Json& j);
};

struct ToolDescriptor {
    std::string tool_name;
    std::string functionality;
    std::string input_spec;
    std::string output_spec;
};

/// Prompt-visible tool metadata. Invocation goes through a handler that
/// reports "unavailable" unless one is installed.
class Toolkit {
  public:
    using Handler = std::function<std::optional<std::string>(const std::string& input)>;

    explicit Toolkit(std::vector<ToolDescriptor> tools = {});

    const std::vector<ToolDescriptor>& tools() const { return tools_; }
    const ToolDescriptor* find(const std::string& name) const;
    std::string describe() const;

    void set_handler(const std::string& name, Handler handler);
    /// nullopt means the tool is unavailable.
    std::optional<std::string> invoke(const std::string& name, const std::string& input) const;

    static Toolkit defaults(const std::optional<std::filesystem::path>& data_dir = {});
    static Toolkit from_json(const Json& j);

  private:
    std::vector<ToolDescriptor> tools_;
    std::map<std::string, Handler> handlers_;
};

/// All stage-2 output for one module.
struct ModuleModel {
    std::string module_name;
    analysis::AgentKind agent = analysis::AgentKind::protocol_specific;
    std::optional<PacketModel> packet;
    std::optional<FsmModel> fsm;
    std::optional<SequenceModel> sequence;
    std::vector<TestingPoint> specific_points;
    /// Content-bearing module sections that no model element cites.
    std::vector<std::string> uncovered_sections;
    Warnings warnings;

    Json to_json() const;
    static ModuleModel from_json(const Json& j);
};

struct ModelingOptions {
    /// Reject transitions that name undeclared states instead of inferring them.
    bool strict_states = false;
    std::optional<int> max_repairs;
    std::optional<std::filesystem::path> data_dir;
};

/// Sections whose titles contain a header keyword first, then the rest, each
/// group in document order.
std::vector<std::string> reorder_header_first(const std::vector<std::string>& sections, const ingest::SpecTree& tree,
                                              const std::vector<std::string>& keywords);
std::vector<std::string> header_keywords(const std::optional<std::filesystem::path>& data_dir = {});

ModuleModel model_fields(const analysis::ProtocolModule& module, const ingest::SpecTree& tree, llm::Gateway& gateway,
                         const ModelingOptions& options = {});

ModuleModel model_fsm(const analysis::ProtocolModule& module, const ingest::SpecTree& tree, llm::Gateway& gateway,
                      const ModelingOptions& options = {});

ModuleModel model_sequence(const analysis::ProtocolModule& module, const ingest::SpecTree& tree,
                           llm::Gateway& gateway, const ModelingOptions& options = {});

/// Focus-moving traversal: each prompt carries one full section body and the
/// summaries of the module's other sections.
ModuleModel model_protocol_specific(const analysis::ProtocolModule& module, const ingest::SpecTree& tree,
                                    const analysis::SummarySet& summaries, const Toolkit& toolkit,
                                    llm::Gateway& gateway, const ModelingOptions& options = {});

/// Dispatches on the module's assigned agent.
ModuleModel model_module(const analysis::ProtocolModule& module, const ingest::SpecTree& tree,
                         const analysis::SummarySet& summaries, const Toolkit& toolkit, llm::Gateway& gateway,
                         const ModelingOptions& options = {});

/// Dedupes on (source, event, target) with constraints and sections unioned.
void integrate_transitions(FsmModel& into, const std::vector<FsmTransition>& incoming);

/// Declares missing states as inferred, or throws DanglingState when strict.
void resolve_dangling(FsmModel& model, bool strict, Warnings& warnings);

/// Stable Kahn order over ordering_constraints. Throws CyclicOrdering.
std::vector<MessageStep> order_steps(const std::vector<MessageStep>& steps, Warnings& warnings);

/// One point per field, transition and step, plus every protocol-specific
/// point, ordered by (origin, first reference section, index).
std::vector<TestingPoint> enumerate_points(const std::vector<ModuleModel>& models);

} // namespace conformgen::modeling
