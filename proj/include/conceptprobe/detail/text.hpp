#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace conceptprobe::detail {

inline bool is_word_char(char c) noexcept {
  const auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) != 0 || c == '\'' || c == '-' || u >= 0x80;
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::string_view trim(std::string_view s) noexcept {
  const auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

/// Lowercased word tokens; anything that is not a word character separates tokens.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char c : text) {
    if (is_word_char(c)) {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!current.empty()) {
      words.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  // Leading/trailing hyphens and apostrophes are punctuation, not part of the word.
  std::vector<std::string> cleaned;
  cleaned.reserve(words.size());
  for (auto& w : words) {
    std::size_t b = 0;
    std::size_t e = w.size();
    while (b < e && (w[b] == '-' || w[b] == '\'')) ++b;
    while (e > b && (w[e - 1] == '-' || w[e - 1] == '\'')) --e;
    if (e > b) cleaned.emplace_back(w.substr(b, e - b));
  }
  return cleaned;
}

/// Case-insensitive whole-word search; `needle` may span several words.
inline bool contains_whole_word(std::string_view haystack, std::string_view needle) {
  const std::string h = to_lower(haystack);
  const std::string n = to_lower(trim(needle));
  if (n.empty()) return false;
  std::size_t pos = h.find(n);
  while (pos != std::string::npos) {
    const bool left_ok = pos == 0 || !is_word_char(h[pos - 1]);
    const std::size_t end = pos + n.size();
    const bool right_ok = end == h.size() || !is_word_char(h[end]);
    if (left_ok && right_ok) return true;
    pos = h.find(n, pos + 1);
  }
  return false;
}

inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL) noexcept {
  std::uint64_t h = seed;
  for (char c : data) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// splitmix64 finalizer; good enough to decorrelate small integer keys.
inline std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Shortest of "%.{decimals}f" with trailing zeros removed: 99.0 -> "99", 9.070 -> "9.07".
inline std::string format_number(double v, int decimals = 2) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  std::string s(buf);
  if (s.find('.') != std::string::npos) {
    while (!s.empty() && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
  }
  if (s == "-0") s = "0";
  return s;
}

inline std::optional<std::string> base64_decode(std::string_view in) {
  static constexpr auto value_of = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+' || c == '-') return 62;
    if (c == '/' || c == '_') return 63;
    return -1;
  };
  std::string out;
  out.reserve(in.size() * 3 / 4);
  std::uint32_t acc = 0;
  int bits = 0;
  for (char c : in) {
    if (c == '=' || std::isspace(static_cast<unsigned char>(c))) continue;
    const int v = value_of(c);
    if (v < 0) return std::nullopt;
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<char>((acc >> bits) & 0xFFu));
    }
  }
  return out;
}

}  // namespace conceptprobe::detail
