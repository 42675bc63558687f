// SPDX-License-Identifier: Apache-2.0
//
// Text metrics (BLEU, ROUGE-1, ROUGE-L, METEOR) over normalized word lists,
// and image-set metrics (Fréchet feature distance, fidelity, agreement,
// diversity) over a fixed random-projection feature space.
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "peftlab/error.hpp"
#include "peftlab/image.hpp"
#include "peftlab/linalg.hpp"
#include "peftlab/ops.hpp"
#include "peftlab/random.hpp"
#include "peftlab/text.hpp"

namespace peftlab::metrics {

using Words = std::vector<std::string>;

namespace detail {

inline void require_reference(const Words& reference, const char* metric) {
  if (reference.empty()) throw ContractError(std::string(metric) + ": reference must be non-empty");
}

inline std::map<Words, std::size_t> ngram_counts(const Words& w, std::size_t n) {
  std::map<Words, std::size_t> counts;
  for (std::size_t i = 0; i + n <= w.size(); ++i) ++counts[Words(w.begin() + i, w.begin() + i + n)];
  return counts;
}

inline std::size_t clipped_overlap(const Words& c, const Words& r, std::size_t n) {
  const auto cc = ngram_counts(c, n), rc = ngram_counts(r, n);
  std::size_t hits = 0;
  for (const auto& [g, k] : cc) {
    auto it = rc.find(g);
    if (it != rc.end()) hits += std::min(k, it->second);
  }
  return hits;
}

inline double f1(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

inline std::size_t lcs_length(const Words& a, const Words& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace detail

// Sentence BLEU without smoothing; the n-gram order is capped at the
// candidate length so short answers still score.
inline double bleu(const Words& candidate, const Words& reference, std::size_t max_n = 4) {
  detail::require_reference(reference, "bleu");
  if (candidate.empty()) return 0.0;
  const std::size_t order = std::min(max_n, candidate.size());
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= order; ++n) {
    const auto hits = detail::clipped_overlap(candidate, reference, n);
    if (hits == 0) return 0.0;
    log_sum += std::log(static_cast<double>(hits) / static_cast<double>(candidate.size() - n + 1));
  }
  const double c = static_cast<double>(candidate.size()), r = static_cast<double>(reference.size());
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return bp * std::exp(log_sum / static_cast<double>(order));
}

inline double rouge_1(const Words& candidate, const Words& reference) {
  detail::require_reference(reference, "rouge_1");
  if (candidate.empty()) return 0.0;
  const double hits = static_cast<double>(detail::clipped_overlap(candidate, reference, 1));
  return detail::f1(hits / static_cast<double>(candidate.size()),
                    hits / static_cast<double>(reference.size()));
}

inline double rouge_l(const Words& candidate, const Words& reference) {
  detail::require_reference(reference, "rouge_l");
  if (candidate.empty()) return 0.0;
  const double lcs = static_cast<double>(detail::lcs_length(candidate, reference));
  return detail::f1(lcs / static_cast<double>(candidate.size()),
                    lcs / static_cast<double>(reference.size()));
}

struct Alignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};

// Exact-unigram alignment. Each candidate word takes the reference position
// that extends the current chunk when possible, else the first free one.
inline Alignment align_exact(const Words& candidate, const Words& reference) {
  std::vector<bool> used(reference.size(), false);
  Alignment a;
  std::ptrdiff_t prev_ref = -2;
  bool prev_matched = false;
  for (const auto& w : candidate) {
    std::ptrdiff_t pick = -1;
    const auto next = static_cast<std::size_t>(prev_ref + 1);
    if (prev_matched && next < reference.size() && !used[next] && reference[next] == w) {
      pick = static_cast<std::ptrdiff_t>(next);
    } else {
      for (std::size_t j = 0; j < reference.size(); ++j)
        if (!used[j] && reference[j] == w) {
          pick = static_cast<std::ptrdiff_t>(j);
          break;
        }
    }
    if (pick < 0) {
      prev_matched = false;
      continue;
    }
    used[static_cast<std::size_t>(pick)] = true;
    if (!(prev_matched && pick == prev_ref + 1)) ++a.chunks;
    ++a.matches;
    prev_ref = pick;
    prev_matched = true;
  }
  return a;
}

inline double meteor(const Words& candidate, const Words& reference) {
  detail::require_reference(reference, "meteor");
  if (candidate.empty()) return 0.0;
  const auto a = align_exact(candidate, reference);
  if (a.matches == 0) return 0.0;
  const double m = static_cast<double>(a.matches);
  const double p = m / static_cast<double>(candidate.size());
  const double r = m / static_cast<double>(reference.size());
  const double f = 10.0 * p * r / (r + 9.0 * p);
  const double frag = static_cast<double>(a.chunks) / m;
  return f * (1.0 - 0.5 * frag * frag * frag);
}

struct MetricReport {
  double bleu = 0.0;
  double rouge1 = 0.0;
  double rougeL = 0.0;
  double meteor = 0.0;
};

struct TextPair {
  Words candidate;
  Words reference;
};

// Mean of per-pair scores.
inline MetricReport evaluate_text(const std::vector<TextPair>& pairs) {
  MetricReport r;
  if (pairs.empty()) return r;
  for (const auto& p : pairs) {
    r.bleu += bleu(p.candidate, p.reference);
    r.rouge1 += rouge_1(p.candidate, p.reference);
    r.rougeL += rouge_l(p.candidate, p.reference);
    r.meteor += meteor(p.candidate, p.reference);
  }
  const double n = static_cast<double>(pairs.size());
  r.bleu /= n;
  r.rouge1 /= n;
  r.rougeL /= n;
  r.meteor /= n;
  return r;
}

// Predictions as JSON lines {"id", "candidate", "reference"}.
inline std::vector<TextPair> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("predictions: cannot read " + path.string());
  std::vector<TextPair> pairs;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      pairs.push_back({text::normalize_words(j.at("candidate").get<std::string>()),
                       text::normalize_words(j.at("reference").get<std::string>())});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ": line " + std::to_string(n) + ": " + e.what());
    }
  }
  return pairs;
}

// --- image-set metrics ---------------------------------------------------------

inline constexpr std::size_t kFeatureDim = 16;
inline constexpr std::size_t kPromptEmbedDim = 32;

using Feature = std::vector<double>;

// Fixed seeded projections: centered pixels -> 16 dims -> tanh, and hashed
// mean-pooled prompt words -> 16 dims -> tanh. Never trained.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(std::uint64_t seed = 0) : seed_(seed) {}

  std::vector<Feature> images(const std::vector<Image>& batch) const {
    if (batch.empty()) return {};
    const std::size_t d = batch.front().pixels.size();
    const auto w = projection(d, 1);
    std::vector<Feature> out;
    out.reserve(batch.size());
    for (const auto& im : batch) {
      if (im.pixels.size() != d) throw DimensionError("features: images differ in size");
      std::vector<double> x(d);
      for (std::size_t i = 0; i < d; ++i) x[i] = 2.0 * im.pixels[i] - 1.0;
      out.push_back(project(w, x));
    }
    return out;
  }

  Feature image(const Image& im) const { return images({im}).front(); }

  Feature prompt(const std::string& text) const {
    std::vector<double> pooled(kPromptEmbedDim, 0.0);
    const auto words = text::normalize_words(text);
    for (const auto& w : words) {
      const auto v = hashed_word_vector(w, seed_ ^ 0x70726f6d7074ULL, kPromptEmbedDim);
      for (std::size_t i = 0; i < kPromptEmbedDim; ++i) pooled[i] += v[i];
    }
    if (!words.empty())
      for (auto& v : pooled) v /= static_cast<double>(words.size());
    return project(projection(kPromptEmbedDim, 2), pooled);
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::vector<double> projection(std::size_t in_dim, std::uint64_t stream) const {
    Rng rng = derive_rng(seed_, stream, in_dim);
    return normal_vector(kFeatureDim * in_dim, 1.0 / std::sqrt(static_cast<double>(in_dim)), rng);
  }

  static Feature project(const std::vector<double>& w, const std::vector<double>& x) {
    Feature f(kFeatureDim, 0.0);
    for (std::size_t o = 0; o < kFeatureDim; ++o) {
      double acc = 0.0;
      const double* row = w.data() + o * x.size();
      for (std::size_t i = 0; i < x.size(); ++i) acc += row[i] * x[i];
      f[o] = std::tanh(acc);
    }
    return f;
  }

  std::uint64_t seed_;
};

// Eigenvalues this close to zero are rounding noise; their square roots
// (about 1e-8 for noise of 1e-16) would otherwise dominate the error.
inline double eigen_noise_floor(std::span<const double> eigenvalues) {
  double top = 0.0;
  for (double l : eigenvalues) top = std::max(top, std::abs(l));
  return static_cast<double>(eigenvalues.size()) * std::numeric_limits<double>::epsilon() * top;
}

// ‖μ1−μ2‖² + tr(Σ1 + Σ2 − 2 (Σ1^½ Σ2 Σ1^½)^½), clamped at zero. Eigenvalues
// below the noise floor count as zero in both square roots.
inline double frechet_distance(const std::vector<double>& mu1, const Tensor& sigma1,
                               const std::vector<double>& mu2, const Tensor& sigma2) {
  const std::size_t n = mu1.size();
  if (mu2.size() != n || sigma1.shape() != Shape{n, n} || sigma2.shape() != Shape{n, n}) {
    throw DimensionError("frechet_distance: moment shapes disagree");
  }
  double dist = 0.0;
  for (std::size_t i = 0; i < n; ++i) dist += (mu1[i] - mu2[i]) * (mu1[i] - mu2[i]);
  const double floor1 = eigen_noise_floor(sym_eigen(sigma1).eigenvalues.data());
  const Tensor root1 = sym_apply(sigma1, [floor1](double x) { return x > floor1 ? std::sqrt(x) : 0.0; });
  sym_eigen(sigma2);  // symmetry contract on the second covariance
  const Tensor inner = matmul(matmul(root1, sigma2), root1);
  std::vector<double> sym(n * n);
  const auto in = inner.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) sym[i * n + j] = 0.5 * (in[i * n + j] + in[j * n + i]);
  const auto eig = sym_eigen(Tensor({n, n}, std::move(sym)));
  const double floor2 = eigen_noise_floor(eig.eigenvalues.data());
  double tr_root = 0.0;
  for (double l : eig.eigenvalues.data()) tr_root += l > floor2 ? std::sqrt(l) : 0.0;
  for (std::size_t i = 0; i < n; ++i) dist += sigma1.at(i, i) + sigma2.at(i, i);
  dist -= 2.0 * tr_root;
  return std::max(dist, 0.0);
}

struct Moments {
  std::vector<double> mean;
  Tensor covariance;
};

// Mean and unbiased covariance of a feature set.
inline Moments moments(const std::vector<Feature>& feats) {
  if (feats.size() < 2) {
    throw InputError("moments: need at least 2 samples, got " + std::to_string(feats.size()));
  }
  const std::size_t d = feats.front().size();
  std::vector<double> mu(d, 0.0);
  for (const auto& f : feats)
    for (std::size_t i = 0; i < d; ++i) mu[i] += f[i];
  for (auto& v : mu) v /= static_cast<double>(feats.size());
  std::vector<double> cov(d * d, 0.0);
  for (const auto& f : feats)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) cov[i * d + j] += (f[i] - mu[i]) * (f[j] - mu[j]);
  for (auto& v : cov) v /= static_cast<double>(feats.size() - 1);
  return {std::move(mu), Tensor({d, d}, std::move(cov))};
}

inline double fbd(const std::vector<Image>& real, const std::vector<Image>& gen,
                  const FeatureExtractor& fx) {
  if (real.size() < 2 || gen.size() < 2) {
    throw InputError("fbd: each image set needs at least 2 images (got " +
                     std::to_string(real.size()) + " and " + std::to_string(gen.size()) + ")");
  }
  const auto a = moments(fx.images(real));
  const auto b = moments(fx.images(gen));
  return frechet_distance(a.mean, a.covariance, b.mean, b.covariance);
}

// Cosine similarity; defined as 0 when either vector is zero.
inline double cosine(const Feature& a, const Feature& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

// Mean over generated images of the best cosine match among real images.
inline double fidelity(const std::vector<Image>& gen, const std::vector<Image>& real,
                       const FeatureExtractor& fx) {
  if (gen.empty() || real.empty()) throw InputError("fidelity: image sets must be non-empty");
  const auto g = fx.images(gen), r = fx.images(real);
  double total = 0.0;
  for (const auto& gf : g) {
    double best = -1.0;
    for (const auto& rf : r) best = std::max(best, cosine(gf, rf));
    total += best;
  }
  return total / static_cast<double>(g.size());
}

// Mean cosine between each image and its own prompt.
inline double agreement(const std::vector<Image>& gen, const std::vector<std::string>& prompts,
                        const FeatureExtractor& fx) {
  if (gen.empty()) throw InputError("agreement: image set must be non-empty");
  if (gen.size() != prompts.size()) {
    throw InputError("agreement: " + std::to_string(gen.size()) + " images but " +
                     std::to_string(prompts.size()) + " prompts");
  }
  const auto g = fx.images(gen);
  double total = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) total += cosine(g[i], fx.prompt(prompts[i]));
  return total / static_cast<double>(g.size());
}

// Mean pairwise cosine distance; zero for fewer than two images.
inline double diversity(const std::vector<Image>& gen, const FeatureExtractor& fx) {
  if (gen.empty()) throw InputError("diversity: image set must be non-empty");
  const auto g = fx.images(gen);
  if (g.size() < 2) return 0.0;
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = i + 1; j < g.size(); ++j, ++pairs) total += 1.0 - cosine(g[i], g[j]);
  return total / static_cast<double>(pairs);
}

struct GenReport {
  double fidelity = 0.0;
  double agreement = 0.0;
  double diversity = 0.0;
  double fbd = 0.0;
};

inline GenReport evaluate_generation(const std::vector<Image>& real, const std::vector<Image>& gen,
                                     const std::vector<std::string>& prompts,
                                     const FeatureExtractor& fx) {
  GenReport r;
  r.fidelity = fidelity(gen, real, fx);
  r.agreement = agreement(gen, prompts, fx);
  r.diversity = diversity(gen, fx);
  r.fbd = fbd(real, gen, fx);
  return r;
}

// PNG files of a directory in lexicographic filename order.
inline std::vector<Image> read_png_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw InputError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Image> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(read_png(f));
  return out;
}

// One prompt per line, blank lines skipped.
inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

}  // namespace peftlab::metrics
