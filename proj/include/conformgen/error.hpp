#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace conformgen {

enum class ErrorKind {
    EmptyDocument,
    MissingToc,
    MalformedTocEntry,
    SectionBodyNotFound,
    MissingSlot,
    SchemaViolation,
    BackendUnavailable,
    ReplayMiss,
    UnknownAgent,
    DanglingState,
    CyclicOrdering,
    UnknownClassification,
    PreconditionViolation,
    EmptyIndex,
    AttemptsExhausted,
    DivisionByZero,
    StageFailed,
    MissingPredecessorArtifact,
    ManifestMissing,
    InvalidConfig,
    Io,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library. `subject()` carries the offending
/// item (section number, slot name, line text, stage name) when there is one.
class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, std::string subject, const std::string& message);
    Error(ErrorKind kind, const std::string& message) : Error(kind, {}, message) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& subject() const noexcept { return subject_; }

  private:
    ErrorKind kind_;
    std::string subject_;
};

/// Non-fatal findings collected alongside results.
struct Warning {
    std::string code;
    std::string message;

    bool operator==(const Warning&) const = default;
};

using Warnings = std::vector<Warning>;

} // namespace conformgen
