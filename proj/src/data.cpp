#include "conformgen/data.hpp"

#include "conformgen/error.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace conformgen {

namespace detail {
// Defined in the generated embedded_data.cpp.
const std::map<std::string_view, std::string_view>& embedded_table();
} // namespace detail

std::optional<std::string_view> embedded_data(std::string_view relative_path)
{
    const auto& table = detail::embedded_table();
    auto it = table.find(relative_path);
    if (it == table.end())
        return std::nullopt;
    return it->second;
}

std::vector<std::string> embedded_data_paths()
{
    std::vector<std::string> out;
    for (const auto& [k, v] : detail::embedded_table())
        out.emplace_back(k);
    return out;
}

std::string load_data(std::string_view relative_path, const std::optional<std::filesystem::path>& override_dir)
{
    if (override_dir) {
        auto candidate = *override_dir / relative_path;
        if (std::filesystem::exists(candidate))
            return io::read_file(candidate);
    }
    if (auto embedded = embedded_data(relative_path))
        return std::string(*embedded);
    throw Error(ErrorKind::Io, std::string(relative_path), "no data file " + std::string(relative_path));
}

Json load_json_data(std::string_view relative_path, const std::optional<std::filesystem::path>& override_dir)
{
    auto content = load_data(relative_path, override_dir);
    try {
        return Json::parse(content);
    } catch (const Json::parse_error& e) {
        throw Error(ErrorKind::Io, std::string(relative_path), std::string("bad JSON: ") + e.what());
    }
}

namespace io {

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorKind::Io, path.string(), "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view content)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error(ErrorKind::Io, path.string(), "cannot write " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

Json read_json(const std::filesystem::path& path)
{
    auto content = read_file(path);
    try {
        return Json::parse(content);
    } catch (const Json::parse_error& e) {
        throw Error(ErrorKind::Io, path.string(), std::string("bad JSON: ") + e.what());
    }
}

void write_json(const std::filesystem::path& path, const Json& value) { write_file(path, value.dump(2) + "\n"); }

std::vector<Json> read_jsonl(const std::filesystem::path& path)
{
    std::vector<Json> out;
    std::istringstream in(read_file(path));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        try {
            out.push_back(Json::parse(line));
        } catch (const Json::parse_error& e) {
            throw Error(ErrorKind::Io, path.string(),
                        path.string() + ":" + std::to_string(lineno) + ": bad JSON: " + e.what());
        }
    }
    return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& records)
{
    std::string content;
    for (const auto& r : records) {
        content += r.dump();
        content += '\n';
    }
    write_file(path, content);
}

} // namespace io

} // namespace conformgen
