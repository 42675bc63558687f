// SPDX-License-Identifier: Apache-2.0
//
// Procedural endoscopy-like corpus: textured backgrounds with bright
// elliptical polyps, three question categories per image, a word-level
// vocabulary, an image-disjoint 80/20 split and a loader for external
// image_path,question,answer CSV exports.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "peftlab/error.hpp"
#include "peftlab/image.hpp"
#include "peftlab/random.hpp"
#include "peftlab/text.hpp"

namespace peftlab::data {

// 3 x 3 grid labels, row-major from the top-left cell.
inline constexpr std::array<std::string_view, 9> kGridLabels = {
    "upper-left",   "upper-central", "upper-right",   //
    "central-left", "central",       "central-right",  //
    "lower-left",   "lower-central", "lower-right"};

inline constexpr std::string_view kClinicalDescriptor = "clinical colonoscopy image";
inline constexpr int kMaxPolyps = 4;

enum class Category { kCount, kYesNo, kLocation };

inline std::string_view category_name(Category c) {
  switch (c) {
    case Category::kCount: return "count";
    case Category::kYesNo: return "yesno";
    case Category::kLocation: return "location";
  }
  return "";
}

inline Category parse_category(std::string_view s) {
  if (s == "count") return Category::kCount;
  if (s == "yesno") return Category::kYesNo;
  if (s == "location") return Category::kLocation;
  throw ParseError("unknown question category '" + std::string(s) + "'");
}

struct SyntheticImage {
  std::string id;
  Image pixels;
  int polyp_count = 0;
  std::vector<std::string> polyp_locations;  // one grid label per polyp
};

struct VqaExample {
  std::string image_id;
  std::vector<std::string> question;  // normalized words, first is <MedVQA>
  std::vector<std::string> answer;    // normalized words
  Category category = Category::kCount;
};

struct Corpus {
  std::uint64_t seed = 0;
  std::size_t image_size = 32;
  std::vector<SyntheticImage> images;
  std::vector<VqaExample> examples;

  const SyntheticImage& image(const std::string& id) const {
    for (const auto& im : images)
      if (im.id == id) return im;
    throw InputError("corpus has no image " + id);
  }
};

// Grid cell of a coordinate along one axis. A coordinate exactly on a cell
// boundary belongs to the lower-index cell.
inline int grid_cell(double coord, double extent) {
  const int cell = static_cast<int>(std::ceil(coord * 3.0 / extent)) - 1;
  return std::clamp(cell, 0, 2);
}

inline std::string grid_label(double cy, double cx, double height, double width) {
  return std::string(kGridLabels[grid_cell(cy, height) * 3 + grid_cell(cx, width)]);
}

namespace detail {

struct Ellipse {
  double cy, cx, ry, rx;
  bool contains(std::size_t y, std::size_t x) const {
    const double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
    const double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
    return dy * dy + dx * dx <= 1.0;
  }
};

struct PixelStats {
  double cy = 0, cx = 0;
  std::size_t area = 0;
};

inline PixelStats rasterized_centroid(const Ellipse& e, std::size_t size) {
  PixelStats s;
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x)
      if (e.contains(y, x)) {
        s.cy += static_cast<double>(y) + 0.5;
        s.cx += static_cast<double>(x) + 0.5;
        ++s.area;
      }
  if (s.area) {
    s.cy /= static_cast<double>(s.area);
    s.cx /= static_cast<double>(s.area);
  }
  return s;
}

inline double distance_to_boundary(double coord, double extent) {
  const double a = std::abs(coord - extent / 3.0), b = std::abs(coord - 2.0 * extent / 3.0);
  return std::min(a, b);
}

inline void paint_background(Image& img, Rng& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  struct Wave {
    double fy, fx, phase, amp;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 3; ++i) {
    waves.push_back({0.5 + 1.5 * uni(rng), 0.5 + 1.5 * uni(rng), 2.0 * std::numbers::pi * uni(rng),
                     0.03 + 0.03 * uni(rng)});
  }
  const double base[3] = {0.60 + 0.06 * uni(rng), 0.26 + 0.04 * uni(rng), 0.20 + 0.04 * uni(rng)};
  const double tint[3] = {1.0, 0.6, 0.5};
  // Background green stays below 0.45 so a 0.5 threshold isolates polyps.
  constexpr double kMaxChannel[3] = {1.0, 0.45, 1.0};
  std::normal_distribution<double> speckle(0.0, 0.02);
  const double h = static_cast<double>(img.height), w = static_cast<double>(img.width);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      double lum = 0.0;
      for (const auto& wv : waves) {
        lum += wv.amp * std::sin(2.0 * std::numbers::pi * (wv.fy * y / h + wv.fx * x / w) + wv.phase);
      }
      for (std::size_t c = 0; c < 3; ++c) {
        img.at(y, x, c) = std::clamp(base[c] + tint[c] * lum + speckle(rng), 0.0, kMaxChannel[c]);
      }
    }
  }
}

inline void paint_polyp(Image& img, const Ellipse& e) {
  const double color[3] = {0.96, 0.78, 0.62};
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      if (!e.contains(y, x)) continue;
      const double dy = (y + 0.5 - e.cy) / e.ry, dx = (x + 0.5 - e.cx) / e.rx;
      const double shade = 1.0 - 0.1 * (dy * dy + dx * dx);
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = color[c] * shade;
    }
}

}  // namespace detail

inline std::string image_id(std::size_t index) {
  std::ostringstream os;
  os << "img_" << std::setw(4) << std::setfill('0') << index;
  return os.str();
}

inline std::vector<VqaExample> questions_for(const SyntheticImage& im,
                                             const std::vector<std::size_t>& areas) {
  std::vector<VqaExample> out;
  auto q = [&](std::string_view body) {
    return text::normalize_words(std::string(text::kMedVqaToken) + " " + std::string(body));
  };
  out.push_back({im.id, q("How many polyps are in the image?"),
                 {std::to_string(im.polyp_count)}, Category::kCount});
  out.push_back({im.id, q("Is there a polyp in the image?"),
                 {im.polyp_count > 0 ? "yes" : "no"}, Category::kYesNo});
  if (im.polyp_count == 1) {
    out.push_back({im.id, q("Where is the polyp located?"), {im.polyp_locations[0]},
                   Category::kLocation});
  } else if (im.polyp_count > 1) {
    const auto largest = static_cast<std::size_t>(
        std::max_element(areas.begin(), areas.end()) - areas.begin());
    out.push_back({im.id, q("Where is the largest polyp located?"),
                   {im.polyp_locations[largest]}, Category::kLocation});
  }
  return out;
}

inline Corpus generate_corpus(std::size_t n_images, std::uint64_t seed, std::size_t image_size = 32) {
  if (n_images < 5) throw InputError("generate_corpus: need at least 5 images, got " +
                                     std::to_string(n_images));
  if (image_size < 16 || image_size > 512) {
    throw InputError("generate_corpus: image_size must lie in [16, 512]");
  }
  Corpus corpus;
  corpus.seed = seed;
  corpus.image_size = image_size;

  std::vector<int> counts(n_images);
  for (std::size_t i = 0; i < n_images; ++i) counts[i] = static_cast<int>(i % (kMaxPolyps + 1));
  Rng shuffle_rng = derive_rng(seed, 0);
  std::shuffle(counts.begin(), counts.end(), shuffle_rng);

  const double size = static_cast<double>(image_size);
  const double r_max = std::max(3.0, size / 8.0);
  const double clearance = std::min(2.0, size / 16.0);
  for (std::size_t i = 0; i < n_images; ++i) {
    Rng rng = derive_rng(seed, 1, i);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    SyntheticImage im;
    im.id = image_id(i);
    im.pixels = Image::blank(image_size, image_size);
    detail::paint_background(im.pixels, rng);
    im.polyp_count = counts[i];

    std::vector<detail::Ellipse> placed;
    std::vector<std::size_t> areas;
    for (int attempt = 0; static_cast<int>(placed.size()) < counts[i]; ++attempt) {
      if (attempt > 50000) throw InputError("generate_corpus: cannot place polyps");
      // Greedy placement can paint itself into a corner; start the layout over.
      if (attempt % 500 == 499) {
        placed.clear();
        areas.clear();
        im.polyp_locations.clear();
      }
      detail::Ellipse e;
      e.ry = 2.0 + (r_max - 2.0) * uni(rng);
      e.rx = 2.0 + (r_max - 2.0) * uni(rng);
      e.cy = e.ry + 1.0 + (size - 2.0 * e.ry - 2.0) * uni(rng);
      e.cx = e.rx + 1.0 + (size - 2.0 * e.rx - 2.0) * uni(rng);
      bool ok = true;
      for (const auto& o : placed) {
        const double gap = std::hypot(e.cy - o.cy, e.cx - o.cx);
        if (gap < std::max(e.ry, e.rx) + std::max(o.ry, o.rx) + clearance) ok = false;
      }
      if (!ok) continue;
      const auto stats = detail::rasterized_centroid(e, image_size);
      if (stats.area == 0 || detail::distance_to_boundary(stats.cy, size) < 0.75 ||
          detail::distance_to_boundary(stats.cx, size) < 0.75) {
        continue;
      }
      // Distinct areas keep "the largest polyp" unambiguous.
      if (std::find(areas.begin(), areas.end(), stats.area) != areas.end()) continue;
      placed.push_back(e);
      areas.push_back(stats.area);
      im.polyp_locations.push_back(grid_label(stats.cy, stats.cx, size, size));
    }
    for (const auto& e : placed) detail::paint_polyp(im.pixels, e);

    for (auto& ex : questions_for(im, areas)) corpus.examples.push_back(std::move(ex));
    corpus.images.push_back(std::move(im));
  }
  return corpus;
}

using TokenId = std::size_t;

// Word-level vocabulary. The first five ids are reserved specials.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kMedVqa = 3;
  static constexpr TokenId kUnk = 4;

  Vocabulary() : words_{"<pad>", "<bos>", "<eos>", std::string(text::kMedVqaToken), "<unk>"} {
    reindex();
  }

  // Specials followed by every corpus word in sorted order.
  static Vocabulary build(const std::vector<VqaExample>& examples) {
    std::set<std::string> words;
    for (const auto& ex : examples) {
      for (const auto& w : ex.question) words.insert(w);
      for (const auto& w : ex.answer) words.insert(w);
    }
    Vocabulary v;
    for (const auto& w : words)
      if (!v.index_.count(w)) v.words_.push_back(w);
    v.reindex();
    return v;
  }

  TokenId id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnk : it->second;
  }

  std::vector<TokenId> encode_words(const std::vector<std::string>& words) const {
    std::vector<TokenId> out;
    out.reserve(words.size());
    for (const auto& w : words) out.push_back(id(w));
    return out;
  }

  std::vector<TokenId> tokenize(std::string_view text) const {
    return encode_words(text::normalize_words(text));
  }

  // Drops <pad>, <bos> and <eos>; other tokens map back to their words.
  std::vector<std::string> decode_words(std::span<const TokenId> ids) const {
    std::vector<std::string> out;
    for (auto t : ids) {
      if (t == kPad || t == kBos || t == kEos) continue;
      out.push_back(t < words_.size() ? words_[t] : words_[kUnk]);
    }
    return out;
  }

  std::string detokenize(std::span<const TokenId> ids) const { return text::join(decode_words(ids)); }

  std::size_t size() const { return words_.size(); }
  const std::string& word(TokenId t) const { return words_.at(t); }
  const std::vector<std::string>& words() const { return words_; }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    for (const auto& w : words_) out << w << '\n';
    if (!out) throw InputError("vocab: cannot write " + path.string());
  }

  static Vocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("vocab: cannot read " + path.string());
    Vocabulary v;
    v.words_.clear();
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) v.words_.push_back(line);
    const Vocabulary defaults;
    if (v.words_.size() < defaults.words_.size() ||
        !std::equal(defaults.words_.begin(), defaults.words_.end(), v.words_.begin())) {
      throw ParseError("vocab: " + path.string() + " does not start with the reserved specials");
    }
    v.reindex();
    return v;
  }

 private:
  void reindex() {
    index_.clear();
    for (TokenId i = 0; i < words_.size(); ++i) index_[words_[i]] = i;
  }

  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

struct CorpusSplit {
  std::vector<VqaExample> train;
  std::vector<VqaExample> validation;
  std::vector<std::string> train_ids;
  std::vector<std::string> validation_ids;
  std::uint64_t seed = 0;
};

// 80/20 split by image id, so no image appears on both sides.
inline CorpusSplit split_80_20(const std::vector<VqaExample>& examples, std::uint64_t seed) {
  if (examples.size() < 5) {
    throw InputError("split_80_20: need at least 5 examples, got " + std::to_string(examples.size()));
  }
  std::vector<std::string> ids;
  std::set<std::string> seen;
  for (const auto& ex : examples)
    if (seen.insert(ex.image_id).second) ids.push_back(ex.image_id);
  Rng rng = derive_rng(seed, 0x5b17);
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(ids.size())));
  CorpusSplit split;
  split.seed = seed;
  split.train_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.validation_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  std::sort(split.train_ids.begin(), split.train_ids.end());
  std::sort(split.validation_ids.begin(), split.validation_ids.end());
  const std::set<std::string> train_set(split.train_ids.begin(), split.train_ids.end());
  for (const auto& ex : examples) (train_set.count(ex.image_id) ? split.train : split.validation).push_back(ex);
  return split;
}

inline std::string count_clause(int count) {
  static const char* kWords[] = {"no", "one", "two", "three", "four"};
  if (count == 0) return "no polyp";
  const std::string n = count <= 4 ? kWords[count] : std::to_string(count);
  return n + (count == 1 ? " polyp" : " polyps");
}

// Generation prompt per image: descriptor, count clause and, when polyps are
// present, the location of the first one.
inline std::vector<std::string> build_prompts(const std::vector<SyntheticImage>& images) {
  std::vector<std::string> prompts;
  prompts.reserve(images.size());
  for (const auto& im : images) {
    std::string p = std::string(kClinicalDescriptor) + " with " + count_clause(im.polyp_count);
    if (im.polyp_count > 0) p += " in the " + im.polyp_locations.front() + " region";
    prompts.push_back(std::move(p));
  }
  return prompts;
}

// --- external metadata -------------------------------------------------------

namespace detail {

// One CSV record; handles quoted fields with embedded commas and "" escapes.
inline std::vector<std::string> parse_csv_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (quoted) throw ParseError("line " + std::to_string(line_no) + ": unterminated quote");
  fields.push_back(std::move(cur));
  return fields;
}

inline Category infer_category(const std::vector<std::string>& answer) {
  if (answer.size() == 1 && (answer[0] == "yes" || answer[0] == "no")) return Category::kYesNo;
  if (answer.size() == 1 && !answer[0].empty() &&
      std::all_of(answer[0].begin(), answer[0].end(), [](unsigned char c) { return std::isdigit(c); }))
    return Category::kCount;
  return Category::kLocation;
}

}  // namespace detail

struct ExternalCorpus {
  std::map<std::string, Image> images;  // keyed by image_path as written in the CSV
  std::vector<VqaExample> examples;
};

// Reads image_path,question,answer rows; image paths resolve relative to the
// CSV file. Questions gain the <MedVQA> prefix when missing.
inline ExternalCorpus load_external_metadata(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open file");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": line 1: missing header");
  const auto header = detail::parse_csv_line(line, 1);
  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < header.size(); ++i) column[text::normalize(header[i])] = i;
  for (const char* need : {"image_path", "question", "answer"}) {
    if (!column.count(need)) {
      throw ParseError(path.string() + ": line 1: missing column '" + need + "'");
    }
  }
  ExternalCorpus out;
  const auto base = path.parent_path();
  for (std::size_t line_no = 2; std::getline(in, line); ++line_no) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = detail::parse_csv_line(line, line_no);
    for (const char* need : {"image_path", "question", "answer"}) {
      const auto idx = column.at(need);
      if (idx >= f.size() || f[idx].empty()) {
        throw ParseError(path.string() + ": line " + std::to_string(line_no) + ": missing " + need);
      }
    }
    VqaExample ex;
    ex.image_id = f[column.at("image_path")];
    ex.question = text::normalize_words(f[column.at("question")]);
    if (ex.question.empty() || ex.question.front() != text::kMedVqaToken) {
      ex.question.insert(ex.question.begin(), std::string(text::kMedVqaToken));
    }
    ex.answer = text::normalize_words(f[column.at("answer")]);
    ex.category = detail::infer_category(ex.answer);
    if (!out.images.count(ex.image_id)) {
      const std::filesystem::path p(ex.image_id);
      out.images[ex.image_id] = read_png(p.is_absolute() ? p : base / p);
    }
    out.examples.push_back(std::move(ex));
  }
  return out;
}

// --- corpus on disk ----------------------------------------------------------
//
//   images/<id>.png
//   qa.jsonl       {"image_id", "question", "answer", "category"} per line
//   vocab.txt      one token per line, id = line index
//   manifest.json  seed, sizes, split ids and per-image polyp metadata

inline nlohmann::json example_json(const VqaExample& ex) {
  return {{"image_id", ex.image_id},
          {"question", text::join(ex.question)},
          {"answer", text::join(ex.answer)},
          {"category", std::string(category_name(ex.category))}};
}

inline void save_corpus(const std::filesystem::path& dir, const Corpus& corpus,
                        const CorpusSplit& split, const Vocabulary& vocab) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  for (const auto& im : corpus.images) write_png(dir / "images" / (im.id + ".png"), im.pixels);
  {
    std::ofstream qa(dir / "qa.jsonl", std::ios::trunc);
    for (const auto& ex : corpus.examples) qa << example_json(ex).dump() << '\n';
  }
  vocab.save(dir / "vocab.txt");
  nlohmann::json images = nlohmann::json::array();
  for (const auto& im : corpus.images)
    images.push_back({{"id", im.id}, {"polyp_count", im.polyp_count}, {"locations", im.polyp_locations}});
  nlohmann::json manifest = {{"seed", corpus.seed},
                             {"n_images", corpus.images.size()},
                             {"n_examples", corpus.examples.size()},
                             {"image_size", corpus.image_size},
                             {"split",
                              {{"seed", split.seed},
                               {"train", split.train_ids},
                               {"validation", split.validation_ids}}},
                             {"images", images}};
  std::ofstream(dir / "manifest.json", std::ios::trunc) << manifest.dump(2) << '\n';
}

struct LoadedCorpus {
  Corpus corpus;
  Vocabulary vocab;
  CorpusSplit split;
};

inline LoadedCorpus load_corpus(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw InputError("corpus: no manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("corpus: bad manifest.json: " + std::string(e.what()));
  }
  LoadedCorpus out;
  out.corpus.seed = manifest.at("seed").get<std::uint64_t>();
  out.corpus.image_size = manifest.at("image_size").get<std::size_t>();
  for (const auto& j : manifest.at("images")) {
    SyntheticImage im;
    im.id = j.at("id").get<std::string>();
    im.polyp_count = j.at("polyp_count").get<int>();
    im.polyp_locations = j.at("locations").get<std::vector<std::string>>();
    im.pixels = read_png(dir / "images" / (im.id + ".png"));
    out.corpus.images.push_back(std::move(im));
  }
  std::ifstream qa(dir / "qa.jsonl");
  if (!qa) throw InputError("corpus: no qa.jsonl in " + dir.string());
  std::string line;
  for (std::size_t n = 1; std::getline(qa, line); ++n) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.corpus.examples.push_back({j.at("image_id").get<std::string>(),
                                     text::normalize_words(j.at("question").get<std::string>()),
                                     text::normalize_words(j.at("answer").get<std::string>()),
                                     parse_category(j.at("category").get<std::string>())});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("qa.jsonl line " + std::to_string(n) + ": " + e.what());
    }
  }
  out.vocab = Vocabulary::load(dir / "vocab.txt");
  const auto& sp = manifest.at("split");
  out.split.seed = sp.at("seed").get<std::uint64_t>();
  out.split.train_ids = sp.at("train").get<std::vector<std::string>>();
  out.split.validation_ids = sp.at("validation").get<std::vector<std::string>>();
  const std::set<std::string> train_set(out.split.train_ids.begin(), out.split.train_ids.end());
  for (const auto& ex : out.corpus.examples)
    (train_set.count(ex.image_id) ? out.split.train : out.split.validation).push_back(ex);
  return out;
}

}  // namespace peftlab::data
