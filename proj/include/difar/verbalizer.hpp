#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "difar/kg_store.hpp"

namespace difar {

using TokenSequence = std::vector<std::string>;

/// Separator between query/head/relation/tail segments. Contains brackets,
/// which tokenize() treats as punctuation, so no input text can produce it.
inline constexpr std::string_view kSepToken = "[sep]";

namespace detail {

/// Decodes one UTF-8 code point starting at s[i]; advances i. Invalid bytes are
/// returned as-is (one byte, value >= 0x80) so they stay part of a word.
inline char32_t next_code_point(std::string_view s, std::size_t& i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  auto cont = [&](std::size_t k) -> int {
    if (i + k >= s.size()) return -1;
    const auto b = static_cast<unsigned char>(s[i + k]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
  };
  if (b0 < 0x80) {
    ++i;
    return b0;
  }
  int len = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    ++i;
    return b0;
  }
  for (int k = 1; k < len; ++k) {
    const int c = cont(static_cast<std::size_t>(k));
    if (c < 0) {
      ++i;
      return b0;
    }
    cp = (cp << 6) | static_cast<char32_t>(c);
  }
  i += static_cast<std::size_t>(len);
  return cp;
}

inline bool is_unicode_space(char32_t c) {
  switch (c) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return c >= 0x2000 && c <= 0x200A;
  }
}

/// ASCII punctuation and symbols, plus the common Unicode punctuation blocks.
inline bool is_punctuation(char32_t c) {
  if (c < 0x80) {
    return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
           (c >= 0x7B && c <= 0x7E);
  }
  return (c >= 0xA1 && c <= 0xBF && c != 0xAA && c != 0xB2 && c != 0xB3 && c != 0xB5 &&
          c != 0xB9 && c != 0xBA && c != 0xBC && c != 0xBD && c != 0xBE) ||
         c == 0xD7 || c == 0xF7 ||
         (c >= 0x2010 && c <= 0x2027) || (c >= 0x2030 && c <= 0x205E) ||
         (c >= 0x3001 && c <= 0x3003) || (c >= 0x3008 && c <= 0x3011) ||
         (c >= 0xFF01 && c <= 0xFF0F) || (c >= 0xFF1A && c <= 0xFF20);
}

}  // namespace detail

/// Lowercases ASCII letters and splits on whitespace and punctuation, which is
/// dropped. Digits stay inside their word; non-ASCII letters pass through.
inline TokenSequence tokenize(std::string_view text) {
  TokenSequence out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  };
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t start = i;
    const char32_t cp = detail::next_code_point(text, i);
    if (detail::is_unicode_space(cp) || detail::is_punctuation(cp)) {
      flush();
    } else if (cp < 0x80) {
      char c = static_cast<char>(cp);
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
      current.push_back(c);
    } else {
      current.append(text.substr(start, i - start));
    }
  }
  flush();
  return out;
}

inline TokenSequence verbalize_triplet(const Triplet& t) {
  TokenSequence out = tokenize(t.head);
  out.emplace_back(kSepToken);
  for (auto& tok : tokenize(t.relation)) out.push_back(std::move(tok));
  out.emplace_back(kSepToken);
  for (auto& tok : tokenize(t.tail)) out.push_back(std::move(tok));
  return out;
}

/// x ++ [sep] ++ t: the joint input the reranker scores.
inline TokenSequence concat_pair(const TokenSequence& x, const TokenSequence& t) {
  TokenSequence out;
  out.reserve(x.size() + t.size() + 1);
  out.insert(out.end(), x.begin(), x.end());
  out.emplace_back(kSepToken);
  out.insert(out.end(), t.begin(), t.end());
  return out;
}

}  // namespace difar
