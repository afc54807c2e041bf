#pragma once

#include "conformgen/llm_gateway.hpp"
#include "conformgen/spec_ingest.hpp"

#include <deque>
#include <filesystem>
#include <functional>
#include <random>
#include <regex>
#include <string>
#include <vector>

namespace conformgen::test {

inline std::filesystem::path source_dir() { return CONFORMGEN_SOURCE_DIR; }
inline std::filesystem::path fixture(const std::string& rel) { return source_dir() / "data/fixtures" / rel; }

class TempDir {
  public:
    TempDir()
    {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("conformgen-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

  private:
    std::filesystem::path path_;
};

inline std::string task_of(const std::string& prompt)
{
    static const std::regex re(R"(^### TASK: (\S+))");
    std::smatch m;
    return std::regex_search(prompt, m, re) ? m[1].str() : std::string();
}

/// Serves queued responses in order and keeps every prompt it saw.
class ScriptedBackend : public llm::CompletionBackend {
  public:
    explicit ScriptedBackend(std::vector<std::string> responses = {}) : queue_(responses.begin(), responses.end()) {}
    void push(std::string r) { queue_.push_back(std::move(r)); }
    std::string complete(const std::string& prompt) override
    {
        prompts.push_back(prompt);
        if (queue_.empty())
            throw Error(ErrorKind::ReplayMiss, "scripted backend ran dry");
        auto r = queue_.front();
        queue_.pop_front();
        return r;
    }
    std::vector<std::string> prompts;

  private:
    std::deque<std::string> queue_;
};

/// Tree over the given numbers with one line of body text each.
inline ingest::SpecTree make_tree(const std::vector<std::string>& numbers, const std::string& title = "Test Protocol")
{
    ingest::SpecMetadata md;
    md.spec_number = "9999";
    md.title = title;
    std::vector<ingest::SectionNode> nodes;
    for (const auto& n : numbers) {
        md.toc_entries.push_back({n, "Section " + n});
        ingest::SectionNode node;
        node.number = n;
        node.title = "Section " + n;
        node.content = "Body of section " + n + ". A router MUST do thing " + n + ".";
        nodes.push_back(std::move(node));
    }
    return ingest::SpecTree::assemble(std::move(md), std::move(nodes));
}

} // namespace conformgen::test
