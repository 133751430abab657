#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "volmap/error.hpp"

namespace volmap::text {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

/// Strips a trailing `#` comment and surrounding whitespace.
inline std::string_view strip_comment(std::string_view line) {
  if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
  return trim(line);
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t' && s[i] != '\r') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

/// Strict full-token numeric parse: rejects trailing garbage.
template <typename T>
std::optional<T> parse_number(std::string_view token) {
  T value{};
  if (!token.empty() && token.front() == '+') token.remove_prefix(1);
  const auto* end = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(token.data(), end, value);
  if (ec != std::errc{} || ptr != end) return std::nullopt;
  return value;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kUnreadableFile, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<std::pair<std::size_t, std::string_view>> numbered_lines(std::string_view text) {
  std::vector<std::pair<std::size_t, std::string_view>> out;
  std::size_t line_no = 1;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    out.emplace_back(line_no++, text.substr(0, nl));
    if (nl == std::string_view::npos) break;
    text.remove_prefix(nl + 1);
  }
  return out;
}

/// One `key = value` entry with the line it came from.
struct KeyValue {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
inline std::vector<KeyValue> parse_key_values(std::string_view content, const std::string& source) {
  std::vector<KeyValue> entries;
  for (const auto& [line_no, raw] : numbered_lines(content)) {
    const auto line = strip_comment(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(Errc::kBadConfig,
                  source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw Error(Errc::kBadConfig, source + ":" + std::to_string(line_no) + ": empty key or value");
    }
    for (const auto& e : entries) {
      if (e.key == key) {
        throw Error(Errc::kBadConfig,
                    source + ":" + std::to_string(line_no) + ": duplicate key '" + std::string(key) + "'");
      }
    }
    entries.push_back({std::string(key), std::string(value), line_no});
  }
  return entries;
}

}  // namespace volmap::text
