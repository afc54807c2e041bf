#pragma once

#include "conformgen/llm_gateway.hpp"

#include <memory>
#include <string>

namespace conformgen::fixture {

struct ResponderOptions {
    /// First drafts for FSM-derived cases carry a CLI typo that the
    /// feedback round repairs.
    bool first_draft_typo = true;
};

/// Deterministic stand-in for a model, keyed on the "### TASK:" line of the
/// shipped prompts. It reads the rendered slots back out of the prompt.
std::string respond(const std::string& prompt, const ResponderOptions& options = {});

std::shared_ptr<llm::CompletionBackend> make_backend(ResponderOptions options = {});

} // namespace conformgen::fixture
