#include "promptopt/text.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>

namespace promptopt::text {

bool is_space(char c) noexcept {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

std::string_view trim(std::string_view s) noexcept {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::vector<std::string_view> split_whitespace(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    std::size_t start = i;
    while (i < s.size() && !is_space(s[i])) ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

std::vector<std::string> split(std::string_view s, std::string_view delim) {
  std::vector<std::string> out;
  if (delim.empty()) {
    out.emplace_back(s);
    return out;
  }
  std::size_t pos = 0;
  while (true) {
    auto next = s.find(delim, pos);
    if (next == std::string_view::npos) {
      out.emplace_back(s.substr(pos));
      return out;
    }
    out.emplace_back(s.substr(pos, next - pos));
    pos = next + delim.size();
  }
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

bool contains(std::string_view haystack, std::string_view needle) noexcept {
  return haystack.find(needle) != std::string_view::npos;
}

bool starts_with_ci(std::string_view s, std::string_view prefix) noexcept {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    auto a = s[i], b = prefix[i];
    if (a >= 'A' && a <= 'Z') a = static_cast<char>(a - 'A' + 'a');
    if (b >= 'A' && b <= 'Z') b = static_cast<char>(b - 'A' + 'a');
    if (a != b) return false;
  }
  return true;
}

std::string normalize_answer(std::string_view s) {
  auto tokens = split_whitespace(s);
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += to_lower(tokens[i]);
  }
  if (!out.empty() && out.back() == '.') out.pop_back();
  // "42 ." style: the period was its own token.
  while (!out.empty() && is_space(out.back())) out.pop_back();
  return out;
}

std::vector<std::string> normalized_tokens(std::string_view s) {
  std::vector<std::string> out;
  for (auto tok : split_whitespace(s)) out.push_back(to_lower(tok));
  return out;
}

std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string digest(std::string_view s) { return hex64(fnv1a64(s)).substr(0, 12); }

namespace {

// Length of the UTF-8 sequence starting at s[i]; 1 for invalid lead bytes or
// truncated sequences.
std::size_t sequence_length(std::string_view s, std::size_t i) noexcept {
  auto c = static_cast<unsigned char>(s[i]);
  std::size_t len = 1;
  if (c >= 0xF0 && c <= 0xF4) {
    len = 4;
  } else if (c >= 0xE0) {
    len = 3;
  } else if (c >= 0xC2 && c <= 0xDF) {
    len = 2;
  }
  if (len == 1 || i + len > s.size()) return 1;
  for (std::size_t k = 1; k < len; ++k) {
    if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) return 1;
  }
  return len;
}

}  // namespace

std::size_t codepoint_count(std::string_view s) noexcept {
  std::size_t n = 0;
  for (std::size_t i = 0; i < s.size(); i += sequence_length(s, i)) ++n;
  return n;
}

std::size_t codepoint_to_byte(std::string_view s, std::size_t cp_index) noexcept {
  std::size_t i = 0, n = 0;
  while (i < s.size() && n < cp_index) {
    i += sequence_length(s, i);
    ++n;
  }
  if (n < cp_index) return std::string_view::npos;
  return i;
}

std::optional<std::string> codepoint_substr(std::string_view s,
                                            std::size_t start,
                                            std::size_t end) {
  if (start > end) return std::nullopt;
  auto b = codepoint_to_byte(s, start);
  auto e = codepoint_to_byte(s, end);
  if (b == std::string_view::npos || e == std::string_view::npos) {
    return std::nullopt;
  }
  return std::string(s.substr(b, e - b));
}

std::optional<std::string> fenced_block(std::string_view reply) {
  auto open = reply.find("```");
  if (open == std::string_view::npos) return std::nullopt;
  auto line_end = reply.find('\n', open);
  if (line_end == std::string_view::npos) return std::nullopt;
  auto body_start = line_end + 1;
  auto close = reply.find("```", body_start);
  if (close == std::string_view::npos) return std::nullopt;
  auto body = reply.substr(body_start, close - body_start);
  if (!body.empty() && body.back() == '\n') body.remove_suffix(1);
  if (!body.empty() && body.back() == '\r') body.remove_suffix(1);
  return std::string(body);
}

std::string fence(std::string_view body) {
  std::string out = "```\n";
  out += body;
  if (out.back() != '\n') out += '\n';
  out += "```";
  return out;
}

std::string utc_timestamp_now() {
  using namespace std::chrono;
  auto now = system_clock::now();
  auto secs = time_point_cast<seconds>(now);
  auto ms = duration_cast<milliseconds>(now - secs).count();
  std::time_t t = system_clock::to_time_t(secs);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

}  // namespace promptopt::text
