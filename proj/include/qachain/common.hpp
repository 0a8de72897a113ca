#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace qachain {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad config document (grammar, backend, sweep).
struct ConfigError : Error {
  using Error::Error;
};

// Well-formed document, but an invariant is violated.
struct ValidationError : Error {
  using Error::Error;
};

// Scene / dataset ingestion failure.
struct IngestError : Error {
  using Error::Error;
};

// LLM or VQA transport failure after retries.
struct BackendError : Error {
  using Error::Error;
};

// Caller misuse (CLI maps this to exit code 2).
struct UsageError : Error {
  using Error::Error;
};

// Operation applied to the wrong grammar family.
struct UnsupportedFamilyError : Error {
  using Error::Error;
};

inline std::string to_lower(std::string s) {
  for (char& c : s) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return s;
}

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return s.substr(b, e - b);
}

inline std::string collapse_ws(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  bool in_ws = false;
  for (char c : s) {
    if (is_space(c)) {
      in_ws = true;
      continue;
    }
    if (in_ws && !out.empty()) out.push_back(' ');
    in_ws = false;
    out.push_back(c);
  }
  return out;
}

// Lowercased word tokens; sentence punctuation is dropped.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    if (is_space(c)) {
      if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
      continue;
    }
    switch (c) {
      case '?':
      case '.':
      case ',':
      case '!':
      case ';':
      case ':':
      case '"':
      case '\'':
      case '(':
      case ')':
        continue;
      default:
        cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline std::string join(const std::vector<std::string>& parts, const char* sep = " ") {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace qachain
