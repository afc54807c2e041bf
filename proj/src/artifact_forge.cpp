#include "conformgen/artifact_forge.hpp"

#include "conformgen/text.hpp"

#include <algorithm>
#include <functional>
#include <set>

namespace conformgen::forge {

namespace {

const std::set<std::string>& stopwords()
{
    static const std::set<std::string> s = {"a",  "an", "the", "to",   "of",   "and", "or", "on", "for", "in",
                                            "at", "is", "be",  "that", "this", "it",  "as", "by", "with", "from"};
    return s;
}

std::set<std::string> query_tokens(const std::string& s)
{
    std::set<std::string> out;
    for (auto& t : text::tokens(s))
        if (!stopwords().count(t))
            out.insert(t);
    return out;
}

double overlap(const std::set<std::string>& q, const std::string& summary)
{
    if (q.empty())
        return 0.0;
    auto t = query_tokens(summary);
    std::size_t n = 0;
    for (const auto& w : q)
        n += t.count(w);
    return static_cast<double>(n) / static_cast<double>(q.size());
}

void collect_ids(const SummaryIndexNode& n, std::set<std::string>& ids)
{
    if (!ids.insert(n.entry_id).second)
        throw Error(ErrorKind::InvalidConfig, n.entry_id, "summary index repeats entry id");
    if (n.is_leaf() && !n.payload_ref)
        throw Error(ErrorKind::InvalidConfig, n.entry_id, "summary index leaf without payload_ref");
    for (const auto& c : n.children)
        collect_ids(c, ids);
}

void collect_leaves(const SummaryIndexNode& n, std::vector<const SummaryIndexNode*>& out)
{
    if (n.is_leaf())
        out.push_back(&n);
    for (const auto& c : n.children)
        collect_leaves(c, out);
}

std::string bullet_list(const std::vector<std::string>& items)
{
    if (items.empty())
        return "(none)";
    std::vector<std::string> lines;
    for (const auto& i : items)
        lines.push_back("- " + i);
    return text::join(lines, "\n");
}

std::string numbered(const std::vector<std::string>& items)
{
    std::vector<std::string> lines;
    for (std::size_t i = 0; i < items.size(); ++i)
        lines.push_back(std::to_string(i + 1) + ". " + items[i]);
    return text::join(lines, "\n");
}

Json case_view(const cases::TestCase& tc)
{
    return {{"case_id", tc.case_id},
            {"title", tc.title},
            {"objective", tc.objective},
            {"steps", tc.steps},
            {"expected_results", tc.expected_results},
            {"reference_sections", tc.reference_sections},
            {"topology", tc.topology},
            {"parameters", tc.parameters}};
}

std::vector<std::string> split_multiline(const std::vector<std::string>& lines)
{
    std::vector<std::string> out;
    for (const auto& l : lines)
        for (auto& part : text::split_lines(l)) {
            auto end = part.find_last_not_of(" \t\r");
            out.push_back(end == std::string::npos ? std::string{} : part.substr(0, end + 1));
        }
    return out;
}

/// Lines of `b` missing from `a` (multiset).
std::vector<std::string> minus(const std::vector<std::string>& b, const std::vector<std::string>& a)
{
    std::map<std::string, int> have;
    for (const auto& l : a)
        ++have[text::collapse_whitespace(l)];
    std::vector<std::string> out;
    for (const auto& l : b) {
        auto k = text::collapse_whitespace(l);
        if (k.empty())
            continue;
        auto it = have.find(k);
        if (it != have.end() && it->second > 0)
            --it->second;
        else
            out.push_back(k);
    }
    return out;
}

std::string quote_list(const std::vector<std::string>& v, std::size_t cap = 3)
{
    std::vector<std::string> q;
    for (std::size_t i = 0; i < v.size() && i < cap; ++i)
        q.push_back("'" + v[i] + "'");
    if (v.size() > cap)
        q.push_back("...");
    return text::join(q, ", ");
}

/// Lookup key for a unit: the API or check name of a script step, the first
/// two words of a CLI line.
std::string unit_key(const std::string& line)
{
    auto steps = testbed::parse_script({line});
    if (!steps.empty())
        return steps.front().name;
    auto w = text::words(line);
    if (w.empty())
        return {};
    if (w.size() == 1 || w[0] == "no")
        return w[0];
    return w[0] + " " + w[1];
}

bool word_contains(const std::string& hay, const std::string& needle)
{
    if (needle.empty())
        return false;
    auto h = text::to_lower(hay), n = text::to_lower(needle);
    std::size_t pos = 0;
    auto is_word = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-'; };
    while ((pos = h.find(n, pos)) != std::string::npos) {
        bool left = pos == 0 || !is_word(h[pos - 1]);
        bool right = pos + n.size() >= h.size() || !is_word(h[pos + n.size()]);
        if (left && right)
            return true;
        ++pos;
    }
    return false;
}

} // namespace

// ---------------------------------------------------------------------------

Json ExperienceEntry::to_json() const
{
    return {{"error_signature", error_signature},
            {"category", faults::to_string(category)},
            {"resolution", resolution},
            {"provenance", provenance},
            {"hit_count", hit_count}};
}

ExperienceEntry ExperienceEntry::from_json(const Json& j)
{
    ExperienceEntry e;
    e.error_signature = faults::normalize_signature(j.at("error_signature").get<std::string>());
    auto c = faults::category_from_string(j.at("category").get<std::string>());
    if (!c)
        throw Error(ErrorKind::InvalidConfig, j.at("category").get<std::string>(), "unknown fault category");
    e.category = *c;
    e.resolution = j.value("resolution", "");
    e.provenance = j.value("provenance", "");
    e.hit_count = std::max(0, j.value("hit_count", 0));
    return e;
}

bool ExperiencePool::record(const std::string& signature, faults::FaultCategory category,
                            const std::string& resolution, const std::string& provenance)
{
    auto sig = faults::normalize_signature(signature);
    auto it = std::find_if(entries_.begin(), entries_.end(), [&](const ExperienceEntry& e) { return e.error_signature == sig; });
    if (it != entries_.end()) {
        ++it->hit_count;
        return false;
    }
    entries_.push_back({sig, category, resolution, provenance, 0});
    return true;
}

std::optional<ExperiencePool::Match> ExperiencePool::best_match(const std::string& signature,
                                                                faults::FaultCategory category, double cutoff) const
{
    auto sig = faults::normalize_signature(signature);
    std::optional<Match> best;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& e = entries_[i];
        if (e.category != category)
            continue;
        auto s = faults::signature_similarity(sig, e.error_signature);
        if (s < cutoff)
            continue;
        if (!best || s > best->similarity ||
            (s == best->similarity && e.hit_count > entries_[best->index].hit_count))
            best = Match{i, s};
    }
    return best;
}

Json ExperiencePool::to_json() const
{
    Json arr = Json::array();
    for (const auto& e : entries_)
        arr.push_back(e.to_json());
    return {{"entries", arr}};
}

ExperiencePool ExperiencePool::from_json(const Json& j)
{
    ExperiencePool p;
    std::set<std::string> seen;
    for (const auto& e : j.value("entries", Json::array())) {
        auto entry = ExperienceEntry::from_json(e);
        if (!seen.insert(entry.error_signature).second)
            throw Error(ErrorKind::InvalidConfig, entry.error_signature, "experience pool repeats a signature");
        p.entries_.push_back(std::move(entry));
    }
    return p;
}

Json SummaryIndexNode::to_json() const
{
    Json j = {{"entry_id", entry_id}, {"summary", summary}};
    if (payload_ref)
        j["payload_ref"] = *payload_ref;
    if (!children.empty()) {
        Json arr = Json::array();
        for (const auto& c : children)
            arr.push_back(c.to_json());
        j["children"] = arr;
    }
    return j;
}

SummaryIndexNode SummaryIndexNode::from_json(const Json& j)
{
    std::function<SummaryIndexNode(const Json&)> build = [&](const Json& n) {
        SummaryIndexNode node;
        node.entry_id = n.at("entry_id").get<std::string>();
        node.summary = n.value("summary", "");
        if (n.contains("payload_ref"))
            node.payload_ref = n.at("payload_ref").get<std::string>();
        for (const auto& c : n.value("children", Json::array()))
            node.children.push_back(build(c));
        return node;
    };
    auto root = build(j);
    std::set<std::string> ids;
    ids.insert(root.entry_id);
    for (const auto& c : root.children)
        collect_ids(c, ids);
    return root;
}

SummaryIndexNode* SummaryIndexNode::find(const std::string& id)
{
    if (entry_id == id)
        return this;
    for (auto& c : children)
        if (auto* f = c.find(id))
            return f;
    return nullptr;
}

std::vector<RetrievedEntry> retrieve(const SummaryIndexNode& index, const std::map<std::string, std::string>& payloads,
                                     const std::string& query, std::size_t k)
{
    if (index.children.empty())
        throw Error(ErrorKind::EmptyIndex, index.entry_id, "summary index has no entries");
    if (k == 0)
        return {};
    auto q = query_tokens(query);
    struct Scored {
        RetrievedEntry entry;
        std::size_t order;
    };
    std::vector<Scored> scored;
    std::function<void(const SummaryIndexNode&, std::vector<std::string>, double)> walk =
        [&](const SummaryIndexNode& n, std::vector<std::string> path, double best_ancestor) {
            path.push_back(n.entry_id);
            double own = overlap(q, n.summary);
            if (n.is_leaf()) {
                RetrievedEntry e;
                e.entry_id = n.entry_id;
                e.payload_ref = n.payload_ref.value_or("");
                auto it = payloads.find(e.payload_ref);
                e.payload = it == payloads.end() ? std::string{} : it->second;
                e.path = path;
                e.score = own + 0.5 * best_ancestor;
                scored.push_back({std::move(e), scored.size()});
                return;
            }
            for (const auto& c : n.children)
                walk(c, path, std::max(best_ancestor, own));
        };
    for (const auto& c : index.children)
        walk(c, {index.entry_id}, 0.0);
    std::stable_sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) { return a.entry.score > b.entry.score; });
    std::vector<RetrievedEntry> out;
    for (auto& s : scored) {
        if (out.size() >= k || s.entry.score <= 0.0)
            break;
        out.push_back(std::move(s.entry));
    }
    if (!out.empty())
        return out;
    for (const auto& c : index.children) {
        if (out.size() >= k)
            break;
        RetrievedEntry e;
        e.entry_id = c.entry_id;
        e.path = {index.entry_id, c.entry_id};
        e.low_confidence = true;
        if (c.payload_ref) {
            e.payload_ref = *c.payload_ref;
            auto it = payloads.find(e.payload_ref);
            e.payload = it == payloads.end() ? std::string{} : it->second;
        } else {
            std::vector<std::string> lines{c.summary};
            for (const auto& g : c.children)
                lines.push_back("- " + g.entry_id + ": " + g.summary);
            e.payload = text::join(lines, "\n");
        }
        out.push_back(std::move(e));
    }
    return out;
}

Json FineGrainedIntent::to_json() const
{
    return {{"script_intents", script_intents}, {"config_intents", config_intents}, {"topology_intents", topology_intents}};
}

FineGrainedIntent FineGrainedIntent::from_json(const Json& j)
{
    FineGrainedIntent i;
    i.script_intents = j.value("script_intents", std::vector<std::string>{});
    i.config_intents = j.value("config_intents", std::vector<std::string>{});
    i.topology_intents = j.value("topology_intents", std::vector<std::string>{});
    return i;
}

Json FewShotExample::to_json() const
{
    return {{"example_id", example_id}, {"case_title", case_title}, {"case_text", case_text},
            {"intents", intents.to_json()}, {"uses", uses},          {"passes", passes}};
}

FewShotExample FewShotExample::from_json(const Json& j)
{
    FewShotExample f;
    f.example_id = j.at("example_id").get<std::string>();
    f.case_title = j.value("case_title", "");
    f.case_text = j.value("case_text", "");
    f.intents = FineGrainedIntent::from_json(j.value("intents", Json::object()));
    f.uses = j.value("uses", 0);
    f.passes = j.value("passes", 0);
    return f;
}

// ---------------------------------------------------------------------------

namespace {

const char* kKbFiles[] = {"task_info.json",   "heuristics.json",   "sops.json",     "experience_pool.json",
                          "summary_index.json", "payloads.json",   "few_shots.json"};

KnowledgeBase kb_from(const std::function<Json(const std::string&)>& get)
{
    KnowledgeBase kb;
    auto ti = get("task_info.json");
    kb.task_info.task_description = ti.value("task_description", "");
    kb.task_info.repository_structure = ti.value("repository_structure", "");
    for (const auto& d : ti.value("device_inventory", Json::array()))
        kb.task_info.device_inventory.push_back(
            {d.at("name").get<std::string>(), d.value("role", ""), d.value("interfaces", std::vector<std::string>{})});
    kb.heuristics = get("heuristics.json").value("heuristics", std::vector<std::string>{});
    kb.sops = get("sops.json").value("steps", std::vector<std::string>{});
    kb.pool = ExperiencePool::from_json(get("experience_pool.json"));
    kb.index = SummaryIndexNode::from_json(get("summary_index.json"));
    auto payloads = get("payloads.json");
    for (const auto& [k, v] : payloads.items())
        kb.payloads[k] = v.get<std::string>();
    for (const auto& f : get("few_shots.json").value("examples", Json::array()))
        kb.few_shots.push_back(FewShotExample::from_json(f));
    kb.validate();
    return kb;
}

} // namespace

void KnowledgeBase::validate(const testbed::TestbedProfile* profile) const
{
    if (sops.empty())
        throw Error(ErrorKind::InvalidConfig, "sops", "knowledge base has no SOP steps");
    std::vector<const SummaryIndexNode*> leaves;
    collect_leaves(index, leaves);
    for (const auto* l : leaves)
        if (l != &index && (!l->payload_ref || !payloads.count(*l->payload_ref)))
            throw Error(ErrorKind::InvalidConfig, l->entry_id, "summary index leaf points at a missing payload");
    if (profile) {
        std::set<std::string> kb_names, tb_names;
        for (const auto& d : task_info.device_inventory)
            kb_names.insert(d.name);
        for (const auto& d : profile->devices)
            tb_names.insert(d.name);
        if (kb_names != tb_names)
            throw Error(ErrorKind::InvalidConfig, "device_inventory",
                        "knowledge base device inventory does not match the testbed profile");
    }
}

KnowledgeBase KnowledgeBase::load(const std::filesystem::path& dir)
{
    for (const char* f : kKbFiles)
        if (!std::filesystem::exists(dir / f))
            throw Error(ErrorKind::Io, (dir / f).string(), "knowledge base file missing");
    return kb_from([&](const std::string& f) { return io::read_json(dir / f); });
}

KnowledgeBase KnowledgeBase::defaults(const std::optional<std::filesystem::path>& data_dir)
{
    return kb_from([&](const std::string& f) { return load_json_data("kb/" + f, data_dir); });
}

void KnowledgeBase::save(const std::filesystem::path& dir) const
{
    Json inv = Json::array();
    for (const auto& d : task_info.device_inventory)
        inv.push_back({{"name", d.name}, {"role", d.role}, {"interfaces", d.interfaces}});
    io::write_json(dir / "task_info.json", {{"task_description", task_info.task_description},
                                            {"repository_structure", task_info.repository_structure},
                                            {"device_inventory", inv}});
    io::write_json(dir / "heuristics.json", {{"heuristics", heuristics}});
    io::write_json(dir / "sops.json", {{"steps", sops}});
    io::write_json(dir / "experience_pool.json", pool.to_json());
    io::write_json(dir / "summary_index.json", index.to_json());
    Json p = Json::object();
    for (const auto& [k, v] : payloads)
        p[k] = v;
    io::write_json(dir / "payloads.json", p);
    Json fs = Json::array();
    for (const auto& f : few_shots)
        fs.push_back(f.to_json());
    io::write_json(dir / "few_shots.json", {{"examples", fs}});
}

FixTemplates FixTemplates::from_json(const Json& j)
{
    FixTemplates t;
    for (const auto& [k, v] : j.items()) {
        auto c = faults::category_from_string(k);
        if (!c)
            throw Error(ErrorKind::InvalidConfig, k, "fix template for unknown category");
        t.by_category[*c] = v.get<std::string>();
    }
    return t;
}

FixTemplates FixTemplates::defaults(const std::optional<std::filesystem::path>& data_dir)
{
    return from_json(load_json_data("loops/fix_templates.json", data_dir));
}

Json Correction::to_json() const
{
    Json j = {{"fix", fix}, {"similarity", similarity}};
    if (matched_entry)
        j["matched_signature"] = matched_signature;
    return j;
}

Correction correct(const faults::FaultReport& fault, ExperiencePool& pool, const FixTemplates& templates, double cutoff)
{
    Correction c;
    auto sig = fault.signature.empty() ? faults::normalize_signature(fault.evidence) : fault.signature;
    if (auto m = pool.best_match(sig, fault.category, cutoff)) {
        auto& entry = pool.at(m->index);
        ++entry.hit_count;
        c.fix = entry.resolution;
        c.matched_entry = m->index;
        c.matched_signature = entry.error_signature;
        c.similarity = m->similarity;
        return c;
    }
    auto it = templates.by_category.find(fault.category);
    c.fix = (it == templates.by_category.end() ? std::string("Inspect the failing step and rewrite it.") : it->second) +
            " Evidence: " + fault.evidence;
    return c;
}

ForgeOptions ForgeOptions::from_json(const Json& j)
{
    ForgeOptions o;
    o.retrieval_k = j.value("retrieval_k", o.retrieval_k);
    o.similarity_cutoff = j.value("similarity_cutoff", o.similarity_cutoff);
    o.few_shot_count = j.value("few_shot_count", o.few_shot_count);
    o.few_shot_cap = j.value("few_shot_cap", o.few_shot_cap);
    if (o.similarity_cutoff < 0.0 || o.similarity_cutoff > 1.0)
        throw Error(ErrorKind::InvalidConfig, "similarity_cutoff", "must lie in [0,1]");
    return o;
}

Json ForgeOptions::to_json() const
{
    return {{"retrieval_k", retrieval_k},
            {"similarity_cutoff", similarity_cutoff},
            {"few_shot_count", few_shot_count},
            {"few_shot_cap", few_shot_cap}};
}

std::vector<const FewShotExample*> select_few_shots(const std::vector<FewShotExample>& pool, std::size_t n)
{
    std::vector<const FewShotExample*> all;
    for (const auto& f : pool)
        all.push_back(&f);
    std::stable_sort(all.begin(), all.end(), [](const FewShotExample* a, const FewShotExample* b) { return a->score() > b->score(); });
    if (all.size() > n)
        all.resize(n);
    return all;
}

const Json& artifact_schema()
{
    static const Json s = Json::parse(R"({
        "type": "object",
        "required": ["tester_script", "dut_config"],
        "properties": {
            "tester_script": {"type": "array", "minItems": 1, "items": {"type": "string"}},
            "dut_config": {"type": "array", "items": {"type": "string"}}
        }
    })");
    return s;
}

FineGrainedIntent orchestrate(const cases::TestCase& tc, const std::vector<const FewShotExample*>& few_shots,
                              llm::Gateway& gateway, const ForgeOptions& options)
{
    if (tc.steps.empty())
        throw Error(ErrorKind::PreconditionViolation, tc.case_id, "test case has no steps");
    static const Json schema = Json::parse(R"({
        "type": "object",
        "required": ["script_intents", "config_intents", "topology_intents"],
        "properties": {
            "script_intents": {"type": "array", "items": {"type": "string", "minLength": 1}},
            "config_intents": {"type": "array", "items": {"type": "string", "minLength": 1}},
            "topology_intents": {"type": "array", "items": {"type": "string", "minLength": 1}}
        }
    })");
    std::vector<std::string> shots;
    for (const auto* f : few_shots)
        shots.push_back("Case: " + f->case_title + "\n" + f->case_text + "\nIntents: " + f->intents.to_json().dump());
    auto tmpl = llm::PromptTemplate::load("orchestrator", options.data_dir);
    auto prompt = tmpl.render({{"few_shots", shots.empty() ? "(none)" : text::join(shots, "\n\n")},
                               {"test_case", case_view(tc).dump(2)}});
    auto result = gateway.complete_structured(prompt, schema, options.max_repairs, [](const Json& v) {
        std::vector<std::string> errs;
        if (v.at("script_intents").empty() && v.at("config_intents").empty() && v.at("topology_intents").empty())
            errs.push_back("$: at least one intent list must be non-empty");
        return errs;
    });
    return FineGrainedIntent::from_json(result.value);
}

// ---------------------------------------------------------------------------

Json UpdateSummary::to_json() const
{
    return {{"pool_added", pool_added},
            {"pool_bumped", pool_bumped},
            {"summaries_rewritten", summaries_rewritten},
            {"few_shots_changed", few_shots_changed}};
}

UpdateSummary update_subagents(KnowledgeBase& kb, const RunOutcome& outcome, const ForgeOptions& options)
{
    UpdateSummary sum;
    const auto& rounds = outcome.rounds;

    // Fault corrector: issues that took more than one round to resolve.
    if (outcome.passed && rounds.size() > 1) {
        const auto& last = rounds.back();
        std::set<std::string> still;
        for (const auto& f : last.faults)
            still.insert(f.signature);
        std::set<std::string> done;
        for (std::size_t r = 0; r + 1 < rounds.size(); ++r) {
            if (rounds[r].attempt != last.attempt)
                continue;
            const auto& next = rounds[r + 1];
            for (std::size_t fi = 0; fi < rounds[r].faults.size(); ++fi) {
                const auto& f = rounds[r].faults[fi];
                if (still.count(f.signature) || done.count(f.signature))
                    continue;
                bool fixed_next = std::none_of(next.faults.begin(), next.faults.end(),
                                               [&](const faults::FaultReport& g) { return g.signature == f.signature; });
                if (!fixed_next)
                    continue;
                done.insert(f.signature);
                auto removed = minus(rounds[r].artifact.dut_config, next.artifact.dut_config);
                auto added = minus(next.artifact.dut_config, rounds[r].artifact.dut_config);
                auto removed_s = minus(rounds[r].artifact.tester_script, next.artifact.tester_script);
                auto added_s = minus(next.artifact.tester_script, rounds[r].artifact.tester_script);
                removed.insert(removed.end(), removed_s.begin(), removed_s.end());
                added.insert(added.end(), added_s.begin(), added_s.end());
                std::string resolution;
                if (!removed.empty())
                    resolution += "Replace " + quote_list(removed);
                if (!added.empty())
                    resolution += (resolution.empty() ? "Add " : " with ") + quote_list(added);
                if (resolution.empty())
                    resolution = fi < rounds[r].fixes.size() ? rounds[r].fixes[fi] : "Redraft the failing step.";
                else
                    resolution += ".";
                if (kb.pool.record(f.signature, f.category, resolution, options.run_id + "/" + outcome.test_case.case_id))
                    ++sum.pool_added;
                else
                    ++sum.pool_bumped;
            }
        }
    }

    // Summarizer: entries the fixing round needed but retrieval did not offer.
    std::vector<const SummaryIndexNode*> leaves;
    collect_leaves(kb.index, leaves);
    for (std::size_t r = 0; r + 1 < rounds.size(); ++r) {
        if (rounds[r].faults.empty() || rounds[r + 1].attempt != rounds[r].attempt)
            continue;
        auto added = minus(rounds[r + 1].artifact.dut_config, rounds[r].artifact.dut_config);
        auto added_s = minus(rounds[r + 1].artifact.tester_script, rounds[r].artifact.tester_script);
        added.insert(added.end(), added_s.begin(), added_s.end());
        std::set<std::string> retrieved(rounds[r].retrieved_refs.begin(), rounds[r].retrieved_refs.end());
        for (const auto& line : added) {
            auto key = unit_key(line);
            for (const auto* leaf : leaves) {
                if (!leaf->payload_ref || retrieved.count(leaf->entry_id))
                    continue;
                auto it = kb.payloads.find(*leaf->payload_ref);
                if (it == kb.payloads.end() || !word_contains(it->second, key))
                    continue;
                auto* node = kb.index.find(leaf->entry_id);
                if (node && !word_contains(node->summary, key)) {
                    node->summary += "; " + key;
                    ++sum.summaries_rewritten;
                }
                break;
            }
        }
    }

    // Orchestrator: pass-rate statistics and promotion of passing cases.
    for (const auto& id : outcome.few_shot_ids) {
        auto it = std::find_if(kb.few_shots.begin(), kb.few_shots.end(), [&](const FewShotExample& f) { return f.example_id == id; });
        if (it == kb.few_shots.end())
            continue;
        ++it->uses;
        if (outcome.passed)
            ++it->passes;
        ++sum.few_shots_changed;
    }
    if (outcome.passed && !outcome.intents.empty()) {
        auto id = "case:" + outcome.test_case.case_id;
        bool known = std::any_of(kb.few_shots.begin(), kb.few_shots.end(), [&](const FewShotExample& f) { return f.example_id == id; });
        if (!known) {
            FewShotExample f;
            f.example_id = id;
            f.case_title = outcome.test_case.title;
            f.case_text = outcome.test_case.objective + " Steps: " + text::join(outcome.test_case.steps, " ");
            f.intents = outcome.intents;
            kb.few_shots.push_back(std::move(f));
            ++sum.few_shots_changed;
        }
        while (kb.few_shots.size() > options.few_shot_cap) {
            auto worst = std::min_element(kb.few_shots.begin(), kb.few_shots.end(),
                                          [](const FewShotExample& a, const FewShotExample& b) { return a.score() < b.score(); });
            kb.few_shots.erase(worst);
        }
    }
    return sum;
}

// ---------------------------------------------------------------------------

ArtifactAgent::ArtifactAgent(KnowledgeBase& kb, llm::Gateway& gateway, ForgeOptions options)
    : kb_(kb), gateway_(gateway), options_(std::move(options)), templates_(FixTemplates::defaults(options_.data_dir))
{
}

FineGrainedIntent ArtifactAgent::orchestrate(const cases::TestCase& tc)
{
    auto shots = select_few_shots(kb_.few_shots, options_.few_shot_count);
    few_shot_ids_.clear();
    for (const auto* s : shots)
        few_shot_ids_.push_back(s->example_id);
    return forge::orchestrate(tc, shots, gateway_, options_);
}

Draft ArtifactAgent::draft(const cases::TestCase& tc, const FineGrainedIntent& intents, const RoundFeedback* feedback)
{
    Draft d;
    std::set<std::string> seen;
    std::vector<std::string> queries = intents.script_intents;
    queries.insert(queries.end(), intents.config_intents.begin(), intents.config_intents.end());
    if (queries.empty())
        queries.push_back(tc.title + " " + tc.objective);
    for (const auto& q : queries)
        for (auto& e : retrieve(kb_.index, kb_.payloads, q, options_.retrieval_k))
            if (seen.insert(e.entry_id).second)
                d.retrieved.push_back(std::move(e));

    std::vector<std::string> refs;
    for (const auto& e : d.retrieved)
        refs.push_back("[" + e.entry_id + "]" + (e.low_confidence ? " (low confidence)" : "") + "\n" + e.payload);

    std::vector<std::string> inventory;
    for (const auto& dev : kb_.task_info.device_inventory)
        inventory.push_back("- " + dev.name + " (" + dev.role + "): " + text::join(dev.interfaces, ", "));

    std::string fb = "(first draft)";
    int round = 1;
    if (feedback) {
        round = feedback->round + 1;
        std::vector<std::string> parts;
        parts.push_back("Previous DUT configuration:\n" + text::join(feedback->previous.dut_config, "\n"));
        parts.push_back("Previous tester script:\n" + text::join(feedback->previous.tester_script, "\n"));
        std::vector<std::string> issues;
        for (std::size_t i = 0; i < feedback->faults.size(); ++i) {
            issues.push_back("- [" + faults::to_string(feedback->faults[i].category) + "] " + feedback->faults[i].evidence);
            if (i < feedback->fixes.size())
                issues.push_back("  candidate fix: " + feedback->fixes[i].fix);
        }
        parts.push_back("Faults:\n" + (issues.empty() ? std::string("(none)") : text::join(issues, "\n")));
        fb = text::join(parts, "\n\n");
    }

    auto tmpl = llm::PromptTemplate::load("artifact_generation", options_.data_dir);
    auto prompt = tmpl.render({{"task_description", kb_.task_info.task_description},
                               {"repository_structure", kb_.task_info.repository_structure},
                               {"device_inventory", text::join(inventory, "\n")},
                               {"heuristics", bullet_list(kb_.heuristics)},
                               {"sops", numbered(kb_.sops)},
                               {"test_case", case_view(tc).dump(2)},
                               {"script_intents", bullet_list(intents.script_intents)},
                               {"config_intents", bullet_list(intents.config_intents)},
                               {"topology_intents", bullet_list(intents.topology_intents)},
                               {"references", refs.empty() ? "(none)" : text::join(refs, "\n\n")},
                               {"round", std::to_string(round)},
                               {"feedback", fb}});
    auto result = gateway_.complete_structured(prompt, artifact_schema(), options_.max_repairs);
    d.artifact.case_id = tc.case_id;
    d.artifact.tester_script = split_multiline(result.value.at("tester_script").get<std::vector<std::string>>());
    d.artifact.dut_config = split_multiline(result.value.at("dut_config").get<std::vector<std::string>>());
    return d;
}

Correction ArtifactAgent::correct(const faults::FaultReport& fault)
{
    return forge::correct(fault, kb_.pool, templates_, options_.similarity_cutoff);
}

UpdateSummary ArtifactAgent::finish(const RunOutcome& outcome) { return update_subagents(kb_, outcome, options_); }

} // namespace conformgen::forge
