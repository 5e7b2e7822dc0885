#pragma once

// Tokenization and the six readability / lexical features used as
// proficiency descriptors.

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "ontoctl/error.hpp"
#include "ontoctl/lexicons.hpp"

namespace ontoctl {

struct Word {
  std::string form;  // lowercase surface form, apostrophes normalized to '
  int letters = 0;
  int syllables = 1;
};

struct TokenizedText {
  std::vector<std::vector<Word>> sentences;

  std::size_t word_count() const {
    std::size_t n = 0;
    for (const auto& s : sentences) n += s.size();
    return n;
  }

  std::vector<std::string> tokens() const {
    std::vector<std::string> out;
    for (const auto& s : sentences)
      for (const auto& w : s) out.push_back(w.form);
    return out;
  }
};

inline constexpr std::size_t k_feature_count = 6;

/// Canonical descriptor names, in FeatureVector / CSV column order.
inline constexpr std::array<std::string_view, k_feature_count> k_feature_names = {
    "fkgl", "gunning_fog", "mtld", "pronoun_density", "coleman_liau", "avg_word_length"};

struct FeatureVector {
  double fkgl = 0;
  double gunning_fog = 0;
  double mtld = 0;
  double pronoun_density = 0;
  double coleman_liau = 0;
  double avg_word_length = 0;

  std::array<double, k_feature_count> values() const {
    return {fkgl, gunning_fog, mtld, pronoun_density, coleman_liau, avg_word_length};
  }

  static FeatureVector from_values(std::span<const double> v) {
    if (v.size() != k_feature_count)
      throw Error(ErrorKind::InvalidArgument, "feature vector needs 6 values");
    return {v[0], v[1], v[2], v[3], v[4], v[5]};
  }

  bool operator==(const FeatureVector&) const = default;
};

namespace detail {

struct Utf8Cursor {
  std::string_view text;
  std::size_t pos = 0;

  // Returns the code point at pos and its encoded length. Malformed bytes
  // decode as U+FFFD with length 1.
  std::pair<char32_t, std::size_t> peek(std::size_t at) const {
    auto byte = [&](std::size_t i) { return static_cast<unsigned char>(text[i]); };
    unsigned char b0 = byte(at);
    if (b0 < 0x80) return {b0, 1};
    std::size_t len = (b0 >> 5) == 0x6 ? 2 : (b0 >> 4) == 0xE ? 3 : (b0 >> 3) == 0x1E ? 4 : 0;
    if (len == 0 || at + len > text.size()) return {0xFFFD, 1};
    char32_t cp = len == 2 ? (b0 & 0x1F) : len == 3 ? (b0 & 0x0F) : (b0 & 0x07);
    for (std::size_t i = 1; i < len; ++i) {
      unsigned char b = byte(at + i);
      if ((b >> 6) != 0x2) return {0xFFFD, 1};
      cp = (cp << 6) | (b & 0x3F);
    }
    return {cp, len};
  }
};

inline bool is_letter(char32_t c) {
  if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) return true;
  // Latin-1 supplement and Latin Extended-A/B letters.
  return c >= 0xC0 && c <= 0x24F && c != 0xD7 && c != 0xF7;
}

inline bool is_apostrophe(char32_t c) { return c == '\'' || c == 0x2019; }

inline bool is_space(char32_t c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v' || c == 0xA0;
}

inline char32_t to_lower(char32_t c) {
  if (c >= 'A' && c <= 'Z') return c + 32;
  if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 32;
  return c;
}

inline void append_utf8(std::string& out, char32_t c) {
  if (c < 0x80) {
    out += static_cast<char>(c);
  } else if (c < 0x800) {
    out += static_cast<char>(0xC0 | (c >> 6));
    out += static_cast<char>(0x80 | (c & 0x3F));
  } else if (c < 0x10000) {
    out += static_cast<char>(0xE0 | (c >> 12));
    out += static_cast<char>(0x80 | ((c >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (c & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (c >> 18));
    out += static_cast<char>(0x80 | ((c >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((c >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (c & 0x3F));
  }
}

inline bool is_vowel(char c) {
  return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u' || c == 'y';
}

}  // namespace detail

/// Vowel-group heuristic with a silent-e correction, never below 1.
inline int count_syllables(std::string_view word) {
  int groups = 0;
  bool in_group = false;
  for (char c : word) {
    bool v = detail::is_vowel(c);
    if (v && !in_group) ++groups;
    in_group = v;
  }
  if (word.size() > 2 && word.back() == 'e' && !detail::is_vowel(word[word.size() - 2])) --groups;
  return groups < 1 ? 1 : groups;
}

/// Splits text into sentences on `.`, `!`, `?` followed by whitespace or end
/// of input, and sentences into words (letter runs with internal apostrophes).
/// Throws BlankInput when no word is found.
inline TokenizedText segment(std::string_view text) {
  TokenizedText out;
  std::vector<Word> sentence;
  Word word;
  detail::Utf8Cursor cur{text};

  auto flush_word = [&] {
    if (word.letters > 0) {
      word.syllables = count_syllables(word.form);
      sentence.push_back(std::move(word));
    }
    word = Word{};
  };
  auto flush_sentence = [&] {
    flush_word();
    if (!sentence.empty()) out.sentences.push_back(std::move(sentence));
    sentence.clear();
  };

  std::size_t i = 0;
  while (i < text.size()) {
    auto [c, len] = cur.peek(i);
    std::size_t next = i + len;
    if (detail::is_letter(c)) {
      detail::append_utf8(word.form, detail::to_lower(c));
      ++word.letters;
    } else if (detail::is_apostrophe(c) && word.letters > 0 && next < text.size() &&
               detail::is_letter(cur.peek(next).first)) {
      word.form += '\'';
    } else {
      flush_word();
      if (c == '.' || c == '!' || c == '?') {
        if (next >= text.size() || detail::is_space(cur.peek(next).first)) flush_sentence();
      }
    }
    i = next;
  }
  flush_sentence();
  if (out.sentences.empty()) throw Error(ErrorKind::BlankInput, "no word token found");
  return out;
}

namespace detail {

struct Counts {
  double sentences = 0, words = 0, syllables = 0, letters = 0, complex_words = 0;
};

inline Counts counts(const TokenizedText& t) {
  Counts c;
  for (const auto& s : t.sentences) {
    c.sentences += 1;
    for (const auto& w : s) {
      c.words += 1;
      c.syllables += w.syllables;
      c.letters += w.letters;
      if (w.syllables >= 3) c.complex_words += 1;
    }
  }
  if (c.words == 0) throw Error(ErrorKind::BlankInput, "no words");
  return c;
}

}  // namespace detail

inline double fkgl(const TokenizedText& t) {
  auto c = detail::counts(t);
  return 0.39 * (c.words / c.sentences) + 11.8 * (c.syllables / c.words) - 15.59;
}

inline double gunning_fog(const TokenizedText& t) {
  auto c = detail::counts(t);
  return 0.4 * ((c.words / c.sentences) + 100.0 * (c.complex_words / c.words));
}

inline double coleman_liau(const TokenizedText& t) {
  auto c = detail::counts(t);
  double letters_per_100 = c.letters / c.words * 100.0;
  double sentences_per_100 = c.sentences / c.words * 100.0;
  return 0.0588 * letters_per_100 - 0.296 * sentences_per_100 - 15.8;
}

inline double avg_word_length(const TokenizedText& t) {
  auto c = detail::counts(t);
  return c.letters / c.words;
}

inline double pronoun_density(const TokenizedText& t, const Lexicon& pronouns = pronoun_lexicon()) {
  auto c = detail::counts(t);
  double hits = 0;
  for (const auto& s : t.sentences)
    for (const auto& w : s)
      if (pronouns.contains(w.form)) hits += 1;
  return hits / c.words;
}

inline constexpr double k_mtld_threshold = 0.72;

namespace detail {

template <typename It>
double mtld_pass(It first, It last) {
  double factors = 0;
  std::unordered_set<std::string_view> types;
  std::size_t run = 0;
  double ttr = 1.0;
  std::size_t total = 0;
  for (auto it = first; it != last; ++it) {
    ++total;
    ++run;
    types.insert(*it);
    ttr = static_cast<double>(types.size()) / static_cast<double>(run);
    if (ttr < k_mtld_threshold) {
      factors += 1;
      types.clear();
      run = 0;
      ttr = 1.0;
    }
  }
  if (run > 0) factors += (1.0 - ttr) / (1.0 - k_mtld_threshold);
  if (factors == 0) return static_cast<double>(total);
  return static_cast<double>(total) / factors;
}

}  // namespace detail

/// Bidirectional MTLD over a token sequence.
inline double mtld(std::span<const std::string> tokens) {
  if (tokens.empty()) throw Error(ErrorKind::BlankInput, "no tokens");
  double forward = detail::mtld_pass(tokens.begin(), tokens.end());
  double backward = detail::mtld_pass(tokens.rbegin(), tokens.rend());
  return (forward + backward) / 2.0;
}

inline double mtld(const TokenizedText& t) {
  auto toks = t.tokens();
  return mtld(toks);
}

inline FeatureVector features(const TokenizedText& t) {
  return {fkgl(t), gunning_fog(t), mtld(t), pronoun_density(t), coleman_liau(t), avg_word_length(t)};
}

inline FeatureVector features(std::string_view text) { return features(segment(text)); }

}  // namespace ontoctl
