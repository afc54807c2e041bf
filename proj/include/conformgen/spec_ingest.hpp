#pragma once

#include "conformgen/data.hpp"
#include "conformgen/error.hpp"

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <utility>
#include <vector>

namespace conformgen::ingest {

struct RawSpecDocument {
    std::string source_id;
    std::string text;
};

/// Line-pattern rules for page furniture. Loaded from ingest/cleaning_rules.json.
struct CleaningRules {
    std::vector<std::regex> drop_line_patterns;
    std::vector<std::string> drop_line_sources;
    bool strip_form_feeds = true;

    static CleaningRules from_json(const Json& j);
    static CleaningRules defaults(const std::optional<std::filesystem::path>& data_dir = {});
};

struct TocEntry {
    std::string number; // canonical: "3.1.2", "A", "A.1" (no trailing dot)
    std::string title;

    bool operator==(const TocEntry&) const = default;
};

struct SpecMetadata {
    std::string spec_number;
    std::string title;
    std::string abstract;
    std::vector<TocEntry> toc_entries;
    /// TOC lines without a section number ("References", "Author's Address").
    std::vector<std::string> unnumbered_toc_titles;
    /// Line index (0-based, in the cleaned text) of the first line after the TOC block.
    std::size_t body_start_line = 0;
};

struct SectionNode {
    std::string number;
    std::string title;
    std::string content;
    std::vector<std::size_t> children;
    std::optional<std::size_t> parent;
    int depth = 1;
    bool body_only = false;
    /// 0-based line of the heading in the cleaned text.
    std::size_t heading_line = 0;

    bool has_content() const;
};

class SpecTree {
  public:
    SpecMetadata metadata;

    const std::vector<SectionNode>& nodes() const { return nodes_; }
    const std::vector<std::size_t>& roots() const { return roots_; }
    const std::map<std::string, std::size_t>& index() const { return index_; }
    /// Text in the body not owned by any numbered section (unnumbered back matter).
    const std::vector<std::string>& unassigned() const { return unassigned_; }

    std::size_t size() const { return nodes_.size(); }
    bool contains(const std::string& number) const { return index_.count(number) != 0; }
    const SectionNode& at(const std::string& number) const;
    const SectionNode* find(const std::string& number) const;
    std::size_t body_only_count() const;

    /// Node indices in pre-order (document order for well-formed input).
    std::vector<std::size_t> preorder() const;
    std::vector<std::string> section_numbers() const;

    Json to_json() const;
    static SpecTree from_json(const Json& j);

    /// Index nodes, derive parent/child links and depth from the numbers, and
    /// order children numerically. Throws MalformedTocEntry on duplicate
    /// numbers or a node whose parent number is absent.
    static SpecTree assemble(SpecMetadata metadata, std::vector<SectionNode> nodes,
                             std::vector<std::string> unassigned = {});

  private:
    std::vector<SectionNode> nodes_;
    std::vector<std::size_t> roots_;
    std::map<std::string, std::size_t> index_;
    std::vector<std::string> unassigned_;
};

struct TreeOptions {
    /// Attach numbered body headings missing from the TOC, flagged body_only.
    bool discover_body_only = true;
    /// Lowercased unnumbered headings that end a section's content.
    std::vector<std::string> back_matter_headings;

    static TreeOptions defaults(const std::optional<std::filesystem::path>& data_dir = {});
};

/// Canonical section number if `token` is dotted-decimal ("3.1.2", "3.1.2.")
/// or appendix-letter form ("A", "A.1", "Appendix A").
std::optional<std::string> canonical_section_number(std::string_view token);

std::string clean_document(const RawSpecDocument& raw, const CleaningRules& rules = CleaningRules::defaults());
SpecMetadata extract_metadata(const std::string& cleaned);
SpecTree build_section_tree(const SpecMetadata& metadata, const std::string& cleaned,
                            const TreeOptions& options = TreeOptions::defaults());

/// clean → extract → build in one call.
SpecTree ingest(const RawSpecDocument& raw, const CleaningRules& rules = CleaningRules::defaults(),
                const TreeOptions& options = TreeOptions::defaults());

} // namespace conformgen::ingest
