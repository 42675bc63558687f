// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace peftlab {

using Rng = std::mt19937_64;

// Independent stream for (seed, stream ids...). Results never depend on the
// order in which streams are created.
template <typename... Ids>
Rng derive_rng(std::uint64_t seed, Ids... ids) {
  std::vector<std::uint32_t> words;
  auto push = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  (push(static_cast<std::uint64_t>(ids)), ...);
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

inline std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t fnv1a_bytes(const void* bytes, std::size_t n,
                                 std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::vector<double> normal_vector(std::size_t n, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> out(n);
  for (auto& v : out) v = dist(rng);
  return out;
}

// Fixed pseudo-random vector for a word; the same (word, seed) always maps
// to the same vector.
inline std::vector<double> hashed_word_vector(std::string_view word, std::uint64_t seed,
                                              std::size_t dim) {
  Rng rng = derive_rng(seed, fnv1a(word));
  return normal_vector(dim, 1.0, rng);
}

}  // namespace peftlab
