#include "conformgen/spec_ingest.hpp"

#include "conformgen/text.hpp"

#include <algorithm>
#include <cctype>
#include <functional>
#include <set>

namespace conformgen::ingest {

namespace {

const std::regex kRfcNumber(R"(Request for Comments:\s*([0-9]+))", std::regex::icase);
const std::regex kRfcNumberFallback(R"(^\s*RFC\s*([0-9]+)\b)", std::regex::icase);
const std::regex kTocHeading(R"(^\s*(table of contents|contents)\s*:?\s*$)", std::regex::icase);
const std::regex kAbstractHeading(R"(^\s{0,3}abstract\s*:?\s*$)", std::regex::icase);
const std::regex kStatusHeading(R"(^\s{0,3}status of th(is|e) memo\s*$)", std::regex::icase);
// "title .......... 12", "title   12", "title.12"
const std::regex kPageRef(R"(^(.*?\S)(?:\s*\.(?:\s*\.)+\s*|\s{2,}|\s+\.\s+)([0-9]+|[ivxlc]+)\s*$)");
const std::regex kBodyOnlyHeading(R"(^(\d+(?:\.\d+)+|[A-Z]\.\d+(?:\.\d+)*)\.?\s+([A-Z].*)$)");

bool is_front_heading(std::string_view trimmed)
{
    auto lower = text::to_lower(trimmed);
    return lower == "abstract" || lower.rfind("status of th", 0) == 0 || lower == "table of contents" ||
           lower == "contents" || lower == "copyright notice" || lower.rfind("copyright (c)", 0) == 0;
}

bool has_internal_gap(std::string_view trimmed) { return trimmed.find("   ") != std::string_view::npos; }

std::string normalized_title(std::string_view s) { return text::join(text::tokens(s), " "); }

struct ParsedTocLine {
    std::optional<std::string> number;
    std::string title;
    bool has_page = false;
    bool malformed = false;
};

std::string strip_title_punct(std::string s)
{
    auto t = text::trim_copy(s);
    while (!t.empty() && (t.front() == ':' || t.front() == '-' || t.front() == '.'))
        t = text::trim_copy(t.substr(1));
    return t;
}

ParsedTocLine parse_toc_line(std::string_view line)
{
    ParsedTocLine out;
    std::string body = text::trim_copy(line);
    std::smatch m;
    if (std::regex_match(body, m, kPageRef)) {
        out.has_page = true;
        body = m[1].str();
    }
    auto ws = text::words(body);
    if (ws.empty())
        return out;

    std::size_t title_from = 1;
    std::string token = ws[0];
    bool appendix_prefix = false;
    if (text::to_lower(token) == "appendix" && ws.size() >= 2) {
        appendix_prefix = true;
        token = ws[1];
        while (!token.empty() && (token.back() == ':' || token.back() == '-'))
            token.pop_back();
        title_from = 2;
    }
    auto canon = canonical_section_number(token);
    if (canon && !appendix_prefix && std::isalpha(static_cast<unsigned char>(token[0])) && token.size() == 1) {
        // A bare capital letter is an appendix only when followed by a column gap.
        auto pos = body.find(token);
        auto after = body.substr(pos + token.size());
        if (after.size() < 2 || after[0] != ' ' || after[1] != ' ')
            canon.reset();
    }
    if (canon) {
        out.number = *canon;
        // Title is whatever follows the number token in the original text.
        std::size_t pos = 0;
        for (std::size_t i = 0; i < title_from; ++i) {
            pos = body.find(ws[i], pos);
            pos += ws[i].size();
        }
        out.title = strip_title_punct(body.substr(pos));
        return out;
    }
    if (!appendix_prefix && std::isdigit(static_cast<unsigned char>(token[0])))
        out.malformed = true;
    out.title = body;
    return out;
}

struct HeadingMatch {
    std::string rest;
};

/// If `line` is a heading for `number`, returns the heading text after the number.
std::optional<HeadingMatch> heading_for(std::string_view line, const std::string& number)
{
    if (text::leading_spaces(line) > 3)
        return std::nullopt;
    auto trimmed = text::trim(line);
    auto ws = text::words(trimmed);
    if (ws.empty())
        return std::nullopt;
    std::size_t idx = 0;
    if (text::to_lower(ws[0]) == "appendix" && ws.size() >= 2)
        idx = 1;
    std::string token = ws[idx];
    while (!token.empty() && (token.back() == ':' || token.back() == '-'))
        token.pop_back();
    auto canon = canonical_section_number(token);
    if (!canon || *canon != number)
        return std::nullopt;
    std::size_t pos = 0;
    for (std::size_t i = 0; i <= idx; ++i) {
        pos = trimmed.find(ws[i], pos);
        pos += ws[i].size();
    }
    return HeadingMatch{strip_title_punct(std::string(trimmed.substr(pos)))};
}

bool title_compatible(const std::string& heading_rest, const std::string& toc_title)
{
    auto h = text::tokens(heading_rest);
    auto t = text::tokens(toc_title);
    if (h.empty())
        return t.empty();
    std::size_t n = std::min<std::size_t>({h.size(), t.size(), 4});
    if (n == 0)
        return false;
    return std::equal(h.begin(), h.begin() + static_cast<std::ptrdiff_t>(n), t.begin());
}

std::string parent_number(const std::string& number)
{
    auto dot = number.rfind('.');
    return dot == std::string::npos ? std::string{} : number.substr(0, dot);
}

std::string join_content(const std::vector<std::string>& lines, std::size_t from, std::size_t to)
{
    while (from < to && text::is_blank(lines[from]))
        ++from;
    while (to > from && text::is_blank(lines[to - 1]))
        --to;
    std::string out;
    for (std::size_t i = from; i < to; ++i) {
        std::string_view l = lines[i];
        while (!l.empty() && (l.back() == ' ' || l.back() == '\t'))
            l.remove_suffix(1);
        out.append(l);
        if (i + 1 < to)
            out.push_back('\n');
    }
    return out;
}

} // namespace

bool SectionNode::has_content() const { return !text::is_blank(content); }

CleaningRules CleaningRules::from_json(const Json& j)
{
    CleaningRules rules;
    rules.strip_form_feeds = j.value("strip_form_feeds", true);
    for (const auto& p : j.value("drop_line_patterns", Json::array())) {
        rules.drop_line_sources.push_back(p.get<std::string>());
        rules.drop_line_patterns.emplace_back(p.get<std::string>());
    }
    return rules;
}

CleaningRules CleaningRules::defaults(const std::optional<std::filesystem::path>& data_dir)
{
    static const CleaningRules embedded = from_json(load_json_data("ingest/cleaning_rules.json"));
    if (!data_dir)
        return embedded;
    return from_json(load_json_data("ingest/cleaning_rules.json", data_dir));
}

TreeOptions TreeOptions::defaults(const std::optional<std::filesystem::path>& data_dir)
{
    TreeOptions opts;
    auto j = load_json_data("ingest/cleaning_rules.json", data_dir);
    for (const auto& h : j.value("back_matter_headings", Json::array()))
        opts.back_matter_headings.push_back(text::to_lower(h.get<std::string>()));
    return opts;
}

std::optional<std::string> canonical_section_number(std::string_view token)
{
    std::string t(text::trim(token));
    if (t.size() > 1 && t.back() == '.')
        t.pop_back();
    if (text::to_lower(t).rfind("appendix ", 0) == 0)
        t = text::trim_copy(t.substr(9));
    if (t.empty())
        return std::nullopt;
    static const std::regex dotted(R"(^[0-9]{1,3}(\.[0-9]{1,3})*$)");
    static const std::regex appendix(R"(^[A-Z](\.[0-9]{1,3})*$)");
    if (std::regex_match(t, dotted) || std::regex_match(t, appendix))
        return t;
    return std::nullopt;
}

std::string clean_document(const RawSpecDocument& raw, const CleaningRules& rules)
{
    if (text::is_blank(raw.text))
        throw Error(ErrorKind::EmptyDocument, raw.source_id, "document " + raw.source_id + " is empty");
    auto normalized = text::normalize_newlines(raw.text);
    auto lines = text::split_lines(normalized);
    std::string out;
    out.reserve(normalized.size());
    for (auto& line : lines) {
        if (rules.strip_form_feeds)
            line.erase(std::remove(line.begin(), line.end(), '\f'), line.end());
        bool drop = std::any_of(rules.drop_line_patterns.begin(), rules.drop_line_patterns.end(),
                                [&](const std::regex& re) { return std::regex_match(line, re); });
        if (drop)
            continue;
        out.append(line);
        out.push_back('\n');
    }
    if (text::is_blank(out))
        throw Error(ErrorKind::EmptyDocument, raw.source_id, "document " + raw.source_id + " is blank after cleaning");
    return out;
}

SpecMetadata extract_metadata(const std::string& cleaned)
{
    SpecMetadata meta;
    auto lines = text::split_lines(cleaned);

    std::size_t toc_line = lines.size();
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (std::regex_match(lines[i], kTocHeading)) {
            toc_line = i;
            break;
        }
    }
    if (toc_line == lines.size())
        throw Error(ErrorKind::MissingToc, "no table of contents block found");

    std::smatch m;
    for (std::size_t i = 0; i < std::min<std::size_t>(toc_line, 60); ++i) {
        if (std::regex_search(lines[i], m, kRfcNumber)) {
            meta.spec_number = m[1].str();
            break;
        }
    }
    if (meta.spec_number.empty()) {
        for (std::size_t i = 0; i < std::min<std::size_t>(toc_line, 60); ++i) {
            if (std::regex_search(lines[i], m, kRfcNumberFallback)) {
                meta.spec_number = m[1].str();
                break;
            }
        }
    }

    // Front matter paragraphs before the TOC.
    std::vector<std::vector<std::string>> paragraphs;
    std::vector<std::size_t> paragraph_start;
    {
        std::vector<std::string> cur;
        for (std::size_t i = 0; i < toc_line; ++i) {
            if (text::is_blank(lines[i])) {
                if (!cur.empty()) {
                    paragraphs.push_back(std::move(cur));
                    cur.clear();
                }
                continue;
            }
            if (cur.empty())
                paragraph_start.push_back(i);
            cur.push_back(lines[i]);
        }
        if (!cur.empty())
            paragraphs.push_back(std::move(cur));
    }

    for (const auto& para : paragraphs) {
        bool two_column = std::any_of(para.begin(), para.end(),
                                      [](const std::string& l) { return has_internal_gap(text::trim(l)); });
        auto first = text::trim(para.front());
        if (two_column || is_front_heading(first))
            continue;
        if (text::leading_spaces(para.front()) >= 4) {
            std::vector<std::string> parts;
            for (const auto& l : para)
                parts.push_back(text::trim_copy(l));
            meta.title = text::join(parts, " ");
        }
        break;
    }

    auto paragraph_after = [&](const std::regex& heading) -> std::string {
        for (std::size_t i = 0; i < toc_line; ++i) {
            if (!std::regex_match(lines[i], heading))
                continue;
            std::vector<std::string> parts;
            for (std::size_t j = i + 1; j < toc_line; ++j) {
                if (!text::is_blank(lines[j]) && text::leading_spaces(lines[j]) == 0)
                    break;
                if (!text::is_blank(lines[j]))
                    parts.push_back(text::trim_copy(lines[j]));
            }
            return text::join(parts, " ");
        }
        return {};
    };
    meta.abstract = paragraph_after(kAbstractHeading);
    if (meta.abstract.empty())
        meta.abstract = paragraph_after(kStatusHeading);
    if (meta.title.empty()) {
        for (const auto& para : paragraphs) {
            auto first = text::trim(para.front());
            if (!is_front_heading(first) && !has_internal_gap(first)) {
                meta.title = std::string(first);
                break;
            }
        }
    }
    if (meta.title.empty())
        meta.title = meta.spec_number.empty() ? std::string("Untitled specification") : "RFC " + meta.spec_number;
    if (meta.abstract.empty())
        meta.abstract = meta.title;

    // TOC block.
    std::set<std::string> seen;
    std::optional<std::size_t> entry_indent;
    std::size_t i = toc_line + 1;
    for (; i < lines.size(); ++i) {
        const auto& line = lines[i];
        if (text::is_blank(line))
            continue;
        auto indent = text::leading_spaces(line);
        if (entry_indent && *entry_indent > 0 && indent == 0)
            break;
        auto parsed = parse_toc_line(line);
        if (parsed.malformed) {
            if (meta.toc_entries.empty() || parsed.has_page)
                throw Error(ErrorKind::MalformedTocEntry, text::trim_copy(line),
                            "malformed table of contents entry: " + text::trim_copy(line));
            break;
        }
        if (parsed.number) {
            if (seen.count(*parsed.number)) {
                // Body restarting at a number already listed: TOC is over.
                if (!parsed.has_page)
                    break;
                throw Error(ErrorKind::MalformedTocEntry, text::trim_copy(line),
                            "duplicate table of contents entry " + *parsed.number);
            }
            if (meta.toc_entries.empty())
                entry_indent = indent;
            seen.insert(*parsed.number);
            meta.toc_entries.push_back({*parsed.number, parsed.title});
            continue;
        }
        if (meta.toc_entries.empty() && !parsed.has_page)
            continue;
        if (parsed.has_page) {
            meta.unnumbered_toc_titles.push_back(parsed.title);
            continue;
        }
        // Continuation of a wrapped title.
        if (!meta.toc_entries.empty() && entry_indent && indent > *entry_indent)
            meta.toc_entries.back().title += " " + parsed.title;
        else if (!entry_indent || indent <= *entry_indent)
            break;
    }
    if (meta.toc_entries.empty())
        throw Error(ErrorKind::MissingToc, "table of contents block has no numbered entries");
    meta.body_start_line = i;
    return meta;
}

SpecTree SpecTree::assemble(SpecMetadata metadata, std::vector<SectionNode> nodes, std::vector<std::string> unassigned)
{
    SpecTree tree;
    tree.metadata = std::move(metadata);
    tree.unassigned_ = std::move(unassigned);
    std::stable_sort(nodes.begin(), nodes.end(),
                     [](const SectionNode& a, const SectionNode& b) { return a.heading_line < b.heading_line; });
    for (auto& n : nodes) {
        n.children.clear();
        n.parent.reset();
    }
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        if (!tree.index_.emplace(nodes[k].number, k).second)
            throw Error(ErrorKind::MalformedTocEntry, nodes[k].number, "duplicate section " + nodes[k].number);
    }
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        auto& n = nodes[k];
        n.depth = static_cast<int>(text::section_components(n.number).size());
        auto parent = parent_number(n.number);
        if (parent.empty()) {
            tree.roots_.push_back(k);
            continue;
        }
        auto it = tree.index_.find(parent);
        if (it == tree.index_.end())
            throw Error(ErrorKind::MalformedTocEntry, n.number,
                        "section " + n.number + " has no parent section " + parent);
        n.parent = it->second;
        nodes[it->second].children.push_back(k);
    }
    auto by_number = [&](std::size_t a, std::size_t b) { return text::section_less(nodes[a].number, nodes[b].number); };
    for (auto& n : nodes)
        std::stable_sort(n.children.begin(), n.children.end(), by_number);
    std::stable_sort(tree.roots_.begin(), tree.roots_.end(), by_number);
    tree.nodes_ = std::move(nodes);
    return tree;
}

const SectionNode& SpecTree::at(const std::string& number) const
{
    auto it = index_.find(number);
    if (it == index_.end())
        throw Error(ErrorKind::SectionBodyNotFound, number, "no section " + number);
    return nodes_[it->second];
}

const SectionNode* SpecTree::find(const std::string& number) const
{
    auto it = index_.find(number);
    return it == index_.end() ? nullptr : &nodes_[it->second];
}

std::size_t SpecTree::body_only_count() const
{
    return static_cast<std::size_t>(
        std::count_if(nodes_.begin(), nodes_.end(), [](const SectionNode& n) { return n.body_only; }));
}

std::vector<std::size_t> SpecTree::preorder() const
{
    std::vector<std::size_t> out;
    out.reserve(nodes_.size());
    std::function<void(std::size_t)> visit = [&](std::size_t k) {
        out.push_back(k);
        for (auto c : nodes_[k].children)
            visit(c);
    };
    for (auto r : roots_)
        visit(r);
    return out;
}

std::vector<std::string> SpecTree::section_numbers() const
{
    std::vector<std::string> out;
    for (auto k : preorder())
        out.push_back(nodes_[k].number);
    return out;
}

Json SpecTree::to_json() const
{
    Json toc = Json::array();
    for (const auto& e : metadata.toc_entries)
        toc.push_back({{"number", e.number}, {"title", e.title}});
    Json meta = {{"spec_number", metadata.spec_number},
                 {"title", metadata.title},
                 {"abstract", metadata.abstract},
                 {"toc_entries", toc},
                 {"unnumbered_toc_titles", metadata.unnumbered_toc_titles},
                 {"body_start_line", metadata.body_start_line}};
    std::function<Json(std::size_t)> node_json = [&](std::size_t k) {
        const auto& n = nodes_[k];
        Json children = Json::array();
        for (auto c : n.children)
            children.push_back(node_json(c));
        Json j = {{"number", n.number}, {"title", n.title}, {"depth", n.depth}, {"heading_line", n.heading_line}};
        if (n.body_only)
            j["body_only"] = true;
        j["content"] = n.content;
        j["children"] = children;
        return j;
    };
    Json roots = Json::array();
    for (auto r : roots_)
        roots.push_back(node_json(r));
    return {{"metadata", meta}, {"node_count", nodes_.size()}, {"roots", roots}, {"unassigned", unassigned_}};
}

SpecTree SpecTree::from_json(const Json& j)
{
    SpecMetadata meta;
    const auto& m = j.at("metadata");
    meta.spec_number = m.value("spec_number", "");
    meta.title = m.value("title", "");
    meta.abstract = m.value("abstract", "");
    for (const auto& e : m.value("toc_entries", Json::array()))
        meta.toc_entries.push_back({e.at("number").get<std::string>(), e.at("title").get<std::string>()});
    meta.unnumbered_toc_titles = m.value("unnumbered_toc_titles", std::vector<std::string>{});
    meta.body_start_line = m.value("body_start_line", std::size_t{0});
    std::vector<SectionNode> nodes;
    std::function<void(const Json&)> visit = [&](const Json& nj) {
        SectionNode n;
        n.number = nj.at("number").get<std::string>();
        n.title = nj.value("title", "");
        n.content = nj.value("content", "");
        n.body_only = nj.value("body_only", false);
        n.heading_line = nj.value("heading_line", std::size_t{0});
        nodes.push_back(std::move(n));
        for (const auto& c : nj.value("children", Json::array()))
            visit(c);
    };
    for (const auto& r : j.at("roots"))
        visit(r);
    return assemble(std::move(meta), std::move(nodes), j.value("unassigned", std::vector<std::string>{}));
}

SpecTree build_section_tree(const SpecMetadata& metadata, const std::string& cleaned, const TreeOptions& options)
{
    auto lines = text::split_lines(cleaned);
    std::vector<SectionNode> nodes;
    std::set<std::string> toc_numbers;
    for (const auto& e : metadata.toc_entries)
        toc_numbers.insert(e.number);

    std::size_t cursor = metadata.body_start_line;
    for (const auto& entry : metadata.toc_entries) {
        std::optional<std::size_t> found;
        for (std::size_t i = cursor; i < lines.size() && !found; ++i) {
            auto h = heading_for(lines[i], entry.number);
            if (h && title_compatible(h->rest, entry.title))
                found = i;
        }
        for (std::size_t i = cursor; i < lines.size() && !found; ++i) {
            auto h = heading_for(lines[i], entry.number);
            if (!h)
                continue;
            bool after_blank = i == 0 || text::is_blank(lines[i - 1]);
            bool looks_like_toc = std::regex_match(text::trim_copy(lines[i]), kPageRef);
            if (after_blank && !looks_like_toc)
                found = i;
        }
        if (!found)
            throw Error(ErrorKind::SectionBodyNotFound, entry.number,
                        "heading for section " + entry.number + " (" + entry.title + ") not found in body");
        SectionNode node;
        node.number = entry.number;
        node.title = entry.title;
        node.heading_line = *found;
        nodes.push_back(std::move(node));
        cursor = *found + 1;
    }

    if (options.discover_body_only) {
        std::set<std::string> known = toc_numbers;
        std::vector<SectionNode> discovered;
        for (std::size_t k = 0; k < nodes.size(); ++k) {
            std::size_t from = nodes[k].heading_line + 1;
            std::size_t to = k + 1 < nodes.size() ? nodes[k + 1].heading_line : lines.size();
            std::string lower_bound = nodes[k].number;
            for (std::size_t i = from; i < to; ++i) {
                const auto& line = lines[i];
                if (text::leading_spaces(line) != 0 || line.size() > 74)
                    continue;
                if (i > 0 && !text::is_blank(lines[i - 1]))
                    continue;
                std::smatch m;
                if (!std::regex_match(line, m, kBodyOnlyHeading))
                    continue;
                auto number = canonical_section_number(m[1].str());
                if (!number || known.count(*number) || !known.count(parent_number(*number)))
                    continue;
                if (!text::section_less(lower_bound, *number))
                    continue;
                if (k + 1 < nodes.size() && !text::section_less(*number, nodes[k + 1].number))
                    continue;
                SectionNode node;
                node.number = *number;
                node.title = text::trim_copy(m[2].str());
                node.heading_line = i;
                node.body_only = true;
                known.insert(*number);
                lower_bound = *number;
                discovered.push_back(std::move(node));
            }
        }
        for (auto& d : discovered)
            nodes.push_back(std::move(d));
        std::stable_sort(nodes.begin(), nodes.end(),
                         [](const SectionNode& a, const SectionNode& b) { return a.heading_line < b.heading_line; });
    }

    auto is_back_matter = [&](const std::string& line) {
        if (text::leading_spaces(line) != 0 || text::is_blank(line))
            return false;
        auto lower = text::to_lower(text::trim(line));
        while (!lower.empty() && (lower.back() == ':' || lower.back() == '.'))
            lower.pop_back();
        if (std::find(options.back_matter_headings.begin(), options.back_matter_headings.end(), lower) !=
            options.back_matter_headings.end())
            return true;
        auto norm = normalized_title(lower);
        return std::any_of(metadata.unnumbered_toc_titles.begin(), metadata.unnumbered_toc_titles.end(),
                           [&](const std::string& t) { return normalized_title(t) == norm; });
    };

    std::vector<std::string> unassigned;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
        std::size_t from = nodes[k].heading_line + 1;
        std::size_t to = k + 1 < nodes.size() ? nodes[k + 1].heading_line : lines.size();
        std::size_t stop = to;
        for (std::size_t i = from; i < to; ++i) {
            if (is_back_matter(lines[i])) {
                stop = i;
                break;
            }
        }
        nodes[k].content = join_content(lines, from, stop);
        if (stop < to) {
            auto rest = join_content(lines, stop, to);
            if (!rest.empty())
                unassigned.push_back(std::move(rest));
        }
    }
    return SpecTree::assemble(metadata, std::move(nodes), std::move(unassigned));
}

SpecTree ingest(const RawSpecDocument& raw, const CleaningRules& rules, const TreeOptions& options)
{
    auto cleaned = clean_document(raw, rules);
    auto meta = extract_metadata(cleaned);
    return build_section_tree(meta, cleaned, options);
}

} // namespace conformgen::ingest
