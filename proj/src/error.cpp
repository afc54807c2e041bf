#include "conformgen/error.hpp"

namespace conformgen {

std::string_view to_string(ErrorKind kind)
{
    switch (kind) {
    case ErrorKind::EmptyDocument: return "EmptyDocument";
    case ErrorKind::MissingToc: return "MissingToc";
    case ErrorKind::MalformedTocEntry: return "MalformedTocEntry";
    case ErrorKind::SectionBodyNotFound: return "SectionBodyNotFound";
    case ErrorKind::MissingSlot: return "MissingSlot";
    case ErrorKind::SchemaViolation: return "SchemaViolation";
    case ErrorKind::BackendUnavailable: return "BackendUnavailable";
    case ErrorKind::ReplayMiss: return "ReplayMiss";
    case ErrorKind::UnknownAgent: return "UnknownAgent";
    case ErrorKind::DanglingState: return "DanglingState";
    case ErrorKind::CyclicOrdering: return "CyclicOrdering";
    case ErrorKind::UnknownClassification: return "UnknownClassification";
    case ErrorKind::PreconditionViolation: return "PreconditionViolation";
    case ErrorKind::EmptyIndex: return "EmptyIndex";
    case ErrorKind::AttemptsExhausted: return "AttemptsExhausted";
    case ErrorKind::DivisionByZero: return "DivisionByZero";
    case ErrorKind::StageFailed: return "StageFailed";
    case ErrorKind::MissingPredecessorArtifact: return "MissingPredecessorArtifact";
    case ErrorKind::ManifestMissing: return "ManifestMissing";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::Io: return "Io";
    }
    return "Unknown";
}

Error::Error(ErrorKind kind, std::string subject, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), subject_(std::move(subject))
{
}

} // namespace conformgen
