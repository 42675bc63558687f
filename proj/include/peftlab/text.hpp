// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace peftlab::text {

inline constexpr std::string_view kMedVqaToken = "<MedVQA>";

inline bool is_special(std::string_view word) {
  return word.size() > 2 && word.front() == '<' && word.back() == '>';
}

// Lowercase, whitespace split, trailing punctuation stripped. Special
// tokens such as <MedVQA> pass through unchanged.
inline std::vector<std::string> normalize_words(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) {
    if (is_special(w)) {
      words.push_back(w);
      continue;
    }
    while (!w.empty() && std::ispunct(static_cast<unsigned char>(w.back()))) w.pop_back();
    std::transform(w.begin(), w.end(), w.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (!w.empty()) words.push_back(std::move(w));
  }
  return words;
}

inline std::string join(const std::vector<std::string>& words, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += sep;
    out += words[i];
  }
  return out;
}

inline std::string normalize(std::string_view text) { return join(normalize_words(text)); }

}  // namespace peftlab::text
