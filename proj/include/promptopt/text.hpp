#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

// Small text helpers shared by every module. All whitespace handling is ASCII
// whitespace; UTF-8 is passed through untouched except where offsets are
// explicitly counted in code points.
namespace promptopt::text {

bool is_space(char c) noexcept;

std::string_view trim(std::string_view s) noexcept;

std::string to_lower(std::string_view s);

// Splits on runs of whitespace; never yields empty pieces.
std::vector<std::string_view> split_whitespace(std::string_view s);

std::vector<std::string> split(std::string_view s, std::string_view delim);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

bool contains(std::string_view haystack, std::string_view needle) noexcept;

bool starts_with_ci(std::string_view s, std::string_view prefix) noexcept;

// Trim, lowercase, collapse internal whitespace, drop one trailing period.
std::string normalize_answer(std::string_view s);

// Normalized whitespace tokens (lowercased, punctuation kept).
std::vector<std::string> normalized_tokens(std::string_view s);

std::uint64_t fnv1a64(std::string_view s) noexcept;

std::string hex64(std::uint64_t v);

// Short stable digest used in audit fields.
std::string digest(std::string_view s);

// Number of Unicode scalar values in a UTF-8 string. Invalid bytes count as
// one position each so offsets are always defined.
std::size_t codepoint_count(std::string_view s) noexcept;

// Byte offset of the code point at `cp_index`; npos past the end.
std::size_t codepoint_to_byte(std::string_view s, std::size_t cp_index) noexcept;

// Substring in code point coordinates [start, end). nullopt when out of range.
std::optional<std::string> codepoint_substr(std::string_view s,
                                            std::size_t start,
                                            std::size_t end);

// Content of the first ``` fenced block (language tag line dropped), or
// nullopt when no complete fence exists.
std::optional<std::string> fenced_block(std::string_view reply);

std::string fence(std::string_view body);

// ISO-8601 UTC timestamp with millisecond precision.
std::string utc_timestamp_now();

}  // namespace promptopt::text
