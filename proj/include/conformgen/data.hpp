#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace conformgen {

using Json = nlohmann::ordered_json;

/// Rule tables, prompt templates and default configs ship inside the binary;
/// the files under data/ are compiled in at build time.
std::optional<std::string_view> embedded_data(std::string_view relative_path);
std::vector<std::string> embedded_data_paths();

/// Read `relative_path` from `override_dir` when given and present there,
/// otherwise from the embedded copy. Throws Error(Io) if neither exists.
std::string load_data(std::string_view relative_path, const std::optional<std::filesystem::path>& override_dir = {});
Json load_json_data(std::string_view relative_path, const std::optional<std::filesystem::path>& override_dir = {});

namespace io {
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);
Json read_json(const std::filesystem::path& path);
/// Pretty-printed, two-space indent, trailing newline.
void write_json(const std::filesystem::path& path, const Json& value);
std::vector<Json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& records);
} // namespace io

} // namespace conformgen
