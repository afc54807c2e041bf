#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace conformgen::text {

std::string_view trim(std::string_view s);
std::string trim_copy(std::string_view s);
std::string to_lower(std::string_view s);

/// Collapse every run of whitespace to one space and trim both ends.
std::string collapse_whitespace(std::string_view s);

/// Split on '\n'. A trailing newline does not produce a trailing empty line.
std::vector<std::string> split_lines(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Whitespace-separated words.
std::vector<std::string> words(std::string_view s);

/// Lowercase alphanumeric tokens (anything else separates).
std::vector<std::string> tokens(std::string_view s);

bool is_blank(std::string_view s);
std::size_t leading_spaces(std::string_view s);

/// Replace "\r\n" and lone "\r" with "\n".
std::string normalize_newlines(std::string_view s);

/// Order section numbers component-wise: numeric components numerically,
/// numeric ranks before letters ("9" < "10" < "A" < "A.1" < "B").
bool section_less(std::string_view a, std::string_view b);
std::vector<std::string> section_components(std::string_view number);

/// Lowercase hex SHA-256 of the input bytes.
std::string sha256_hex(std::string_view data);

/// Shortest round-trip decimal ("85", "73.8").
std::string format_number(double v);

} // namespace conformgen::text
