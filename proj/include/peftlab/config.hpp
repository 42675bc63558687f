// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: a sectioned key = value file with sections [data],
// [vqa], [diffusion] and [eval]. Every key has a default; unknown sections or
// keys are rejected so a typo never silently falls back to a default.
#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "peftlab/diffusion.hpp"
#include "peftlab/vqa.hpp"

namespace peftlab::config {

struct DataSection {
  std::size_t n_images = 20;
  std::uint64_t seed = 0;
  std::size_t image_size = 32;
};

struct DiffusionSection {
  diffusion::DiffusionConfig model{};
  std::size_t lora_rank = 4;
  double lora_alpha = 4.0;
  diffusion::DiffusionTrainConfig train{};
};

struct EvalSection {
  std::size_t samples = 8;  // generated images per epoch report
  std::uint64_t sample_seed = 1234;
  std::uint64_t feature_seed = 0;
};

struct RunConfig {
  DataSection data;
  vqa::VqaConfig vqa_model;  // vocab_size and image_size are filled from the corpus
  vqa::VqaTrainConfig vqa_train;
  DiffusionSection diffusion;
  EvalSection eval;

  // One seed drives data, model initialisation and training order.
  void set_seed(std::uint64_t seed) {
    data.seed = seed;
    vqa_model.seed = seed;
    vqa_train.seed = seed;
    diffusion.model.seed = seed;
    diffusion.train.seed = seed;
  }

  void set_epochs(std::size_t epochs) {
    vqa_train.epochs = epochs;
    diffusion.train.epochs = epochs;
  }

  vqa::VqaConfig vqa_for(std::size_t vocab_size, std::size_t image_size) const {
    vqa::VqaConfig c = vqa_model;
    c.vocab_size = vocab_size;
    c.image_size = image_size;
    return c;
  }

  lora::LoraConfig diffusion_lora() const {
    lora::LoraConfig c;
    c.rank = diffusion.lora_rank;
    c.alpha = diffusion.lora_alpha;
    return c;
  }

  diffusion::DiffusionTrainConfig diffusion_train() const {
    auto c = diffusion.train;
    c.eval_samples = eval.samples;
    c.eval_seed = eval.sample_seed;
    c.feature_seed = eval.feature_seed;
    return c;
  }

  void validate() const {
    if (data.n_images < 5) throw ConfigError("data.n_images must be >= 5");
    if (data.image_size < 16 || data.image_size > 512) throw ConfigError("data.image_size must lie in [16, 512]");
    vqa_for(data::Vocabulary::kUnk + 1, data.image_size).validate();
    vqa_train.adamw.validate();
    if (vqa_train.batch_size == 0 || vqa_train.accumulation_steps == 0 || vqa_train.epochs == 0)
      throw ConfigError("vqa: batch_size, accumulation_steps and epochs must be >= 1");
    diffusion.model.validate();
    if (data.image_size % diffusion.model.latent_size != 0)
      throw ConfigError("diffusion.latent_size must divide data.image_size");
    diffusion_lora().validate();
    diffusion.train.adamw.validate();
    if (diffusion.train.batch_size == 0 || diffusion.train.accumulation_steps == 0 || diffusion.train.epochs == 0)
      throw ConfigError("diffusion: batch_size, accumulation_steps and epochs must be >= 1");
    if (eval.samples < 2) throw ConfigError("eval.samples must be >= 2");
  }
};

// --- value text ------------------------------------------------------------------

inline std::string format_value(std::uint64_t v) { return std::to_string(v); }
inline std::string format_value(bool v) { return v ? "true" : "false"; }

// Shortest text that parses back to the same double.
inline std::string format_value(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  T v{};
  if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + text + "'");
  } else {
    const char* end = text.data() + text.size();
    const auto r = std::from_chars(text.data(), end, v);
    if (text.empty() || r.ec != std::errc() || r.ptr != end) {
      throw ConfigError(key + ": cannot parse '" + text + "' as a " +
                        (std::is_floating_point_v<T> ? "number" : "non-negative integer"));
    }
    return v;
  }
}

// --- key registry ------------------------------------------------------------------

struct Field {
  std::string section;
  std::string key;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

namespace detail {

template <typename Ref>
Field make_field(std::string section, std::string key, std::string help, Ref ref) {
  Field f{section, key, std::move(help), {}, {}};
  const std::string full = section + "." + key;
  f.get = [ref](const RunConfig& c) {
    RunConfig copy = c;
    using T = std::remove_reference_t<decltype(ref(copy))>;
    if constexpr (std::is_same_v<T, bool> || std::is_same_v<T, double>) return format_value(ref(copy));
    else return format_value(static_cast<std::uint64_t>(ref(copy)));
  };
  f.set = [ref, full](RunConfig& c, const std::string& text) {
    using T = std::remove_reference_t<decltype(ref(c))>;
    ref(c) = parse_value<T>(full, text);
  };
  return f;
}

inline void add_adamw(std::vector<Field>& out, const std::string& s,
                      optim::AdamWConfig& (*get)(RunConfig&)) {
  out.push_back(make_field(s, "learning_rate", "peak learning rate",
                     [get](RunConfig& c) -> double& { return get(c).learning_rate; }));
  out.push_back(make_field(s, "weight_decay", "decoupled weight decay",
                     [get](RunConfig& c) -> double& { return get(c).weight_decay; }));
  out.push_back(make_field(s, "beta1", "first-moment decay", [get](RunConfig& c) -> double& { return get(c).beta1; }));
  out.push_back(make_field(s, "beta2", "second-moment decay", [get](RunConfig& c) -> double& { return get(c).beta2; }));
  out.push_back(make_field(s, "eps", "denominator epsilon", [get](RunConfig& c) -> double& { return get(c).eps; }));
}

}  // namespace detail

inline const std::vector<Field>& fields() {
  using detail::make_field;
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back(make_field("data", "n_images", "synthetic images to generate",
                     [](RunConfig& c) -> std::size_t& { return c.data.n_images; }));
    f.push_back(make_field("data", "seed", "corpus and split seed",
                     [](RunConfig& c) -> std::uint64_t& { return c.data.seed; }));
    f.push_back(make_field("data", "image_size", "image side in pixels",
                     [](RunConfig& c) -> std::size_t& { return c.data.image_size; }));

    f.push_back(make_field("vqa", "d_model", "model width", [](RunConfig& c) -> std::size_t& { return c.vqa_model.d_model; }));
    f.push_back(make_field("vqa", "n_heads", "attention heads", [](RunConfig& c) -> std::size_t& { return c.vqa_model.n_heads; }));
    f.push_back(make_field("vqa", "vision_layers", "vision encoder blocks",
                     [](RunConfig& c) -> std::size_t& { return c.vqa_model.vision_layers; }));
    f.push_back(make_field("vqa", "encoder_layers", "text encoder blocks",
                     [](RunConfig& c) -> std::size_t& { return c.vqa_model.encoder_layers; }));
    f.push_back(make_field("vqa", "decoder_layers", "answer decoder blocks",
                     [](RunConfig& c) -> std::size_t& { return c.vqa_model.decoder_layers; }));
    f.push_back(make_field("vqa", "ff_multiplier", "feed-forward width / d_model",
                     [](RunConfig& c) -> std::size_t& { return c.vqa_model.ff_multiplier; }));
    f.push_back(make_field("vqa", "patch_size", "vision patch side",
                     [](RunConfig& c) -> std::size_t& { return c.vqa_model.patch_size; }));
    f.push_back(make_field("vqa", "max_question_len", "question tokens incl. prefix",
                     [](RunConfig& c) -> std::size_t& { return c.vqa_model.max_question_len; }));
    f.push_back(make_field("vqa", "max_answer_len", "generated answer cap",
                     [](RunConfig& c) -> std::size_t& { return c.vqa_model.max_answer_len; }));
    f.push_back(make_field("vqa", "freeze_vision", "keep the vision encoder fixed",
                     [](RunConfig& c) -> bool& { return c.vqa_model.freeze_vision; }));
    f.push_back(make_field("vqa", "lora_rank", "0 trains the language side in full",
                     [](RunConfig& c) -> std::size_t& { return c.vqa_model.lora_rank; }));
    f.push_back(make_field("vqa", "lora_alpha", "0 means alpha = rank",
                     [](RunConfig& c) -> double& { return c.vqa_model.lora_alpha; }));
    detail::add_adamw(f, "vqa", [](RunConfig& c) -> optim::AdamWConfig& { return c.vqa_train.adamw; });
    f.push_back(make_field("vqa", "warmup_steps", "linear warmup optimizer steps",
                     [](RunConfig& c) -> std::size_t& { return c.vqa_train.warmup_steps; }));
    f.push_back(make_field("vqa", "min_lr", "cosine floor", [](RunConfig& c) -> double& { return c.vqa_train.min_lr; }));
    f.push_back(make_field("vqa", "batch_size", "examples per micro-batch",
                     [](RunConfig& c) -> std::size_t& { return c.vqa_train.batch_size; }));
    f.push_back(make_field("vqa", "accumulation_steps", "micro-batches per optimizer step",
                     [](RunConfig& c) -> std::size_t& { return c.vqa_train.accumulation_steps; }));
    f.push_back(make_field("vqa", "epochs", "training epochs", [](RunConfig& c) -> std::size_t& { return c.vqa_train.epochs; }));
    f.push_back(make_field("vqa", "clip_norm", "global gradient norm cap, 0 disables",
                     [](RunConfig& c) -> double& { return c.vqa_train.clip_norm; }));
    f.push_back(make_field("vqa", "seed", "initialisation and shuffle seed",
                     [](RunConfig& c) -> std::uint64_t& { return c.vqa_train.seed; }));

    f.push_back(make_field("diffusion", "timesteps", "noise steps T",
                     [](RunConfig& c) -> std::size_t& { return c.diffusion.model.timesteps; }));
    f.push_back(make_field("diffusion", "beta_start", "first beta", [](RunConfig& c) -> double& { return c.diffusion.model.beta_start; }));
    f.push_back(make_field("diffusion", "beta_end", "last beta", [](RunConfig& c) -> double& { return c.diffusion.model.beta_end; }));
    f.push_back(make_field("diffusion", "latent_size", "latent grid side",
                     [](RunConfig& c) -> std::size_t& { return c.diffusion.model.latent_size; }));
    f.push_back(make_field("diffusion", "cond_dim", "prompt embedding width",
                     [](RunConfig& c) -> std::size_t& { return c.diffusion.model.cond_dim; }));
    f.push_back(make_field("diffusion", "hidden", "denoiser width", [](RunConfig& c) -> std::size_t& { return c.diffusion.model.hidden; }));
    f.push_back(make_field("diffusion", "heads", "attention heads", [](RunConfig& c) -> std::size_t& { return c.diffusion.model.heads; }));
    f.push_back(make_field("diffusion", "blocks", "residual blocks", [](RunConfig& c) -> std::size_t& { return c.diffusion.model.blocks; }));
    f.push_back(make_field("diffusion", "lora_rank", "adapter rank", [](RunConfig& c) -> std::size_t& { return c.diffusion.lora_rank; }));
    f.push_back(make_field("diffusion", "lora_alpha", "adapter alpha", [](RunConfig& c) -> double& { return c.diffusion.lora_alpha; }));
    detail::add_adamw(f, "diffusion", [](RunConfig& c) -> optim::AdamWConfig& { return c.diffusion.train.adamw; });
    f.push_back(make_field("diffusion", "warmup_steps", "linear warmup optimizer steps",
                     [](RunConfig& c) -> std::size_t& { return c.diffusion.train.warmup_steps; }));
    f.push_back(make_field("diffusion", "min_lr", "cosine floor", [](RunConfig& c) -> double& { return c.diffusion.train.min_lr; }));
    f.push_back(make_field("diffusion", "batch_size", "images per micro-batch",
                     [](RunConfig& c) -> std::size_t& { return c.diffusion.train.batch_size; }));
    f.push_back(make_field("diffusion", "accumulation_steps", "micro-batches per optimizer step",
                     [](RunConfig& c) -> std::size_t& { return c.diffusion.train.accumulation_steps; }));
    f.push_back(make_field("diffusion", "epochs", "training epochs",
                     [](RunConfig& c) -> std::size_t& { return c.diffusion.train.epochs; }));
    f.push_back(make_field("diffusion", "clip_norm", "global gradient norm cap, 0 disables",
                     [](RunConfig& c) -> double& { return c.diffusion.train.clip_norm; }));
    f.push_back(make_field("diffusion", "seed", "base, adapter and shuffle seed",
                     [](RunConfig& c) -> std::uint64_t& { return c.diffusion.train.seed; }));

    f.push_back(make_field("eval", "samples", "generated images per report",
                     [](RunConfig& c) -> std::size_t& { return c.eval.samples; }));
    f.push_back(make_field("eval", "sample_seed", "sampler seed for reports",
                     [](RunConfig& c) -> std::uint64_t& { return c.eval.sample_seed; }));
    f.push_back(make_field("eval", "feature_seed", "feature extractor seed",
                     [](RunConfig& c) -> std::uint64_t& { return c.eval.feature_seed; }));
    return f;
  }();
  return all;
}

// The two per-section seeds that the registry exposes also drive the model
// initialisation, so keep them in step after every assignment.
inline void sync_seeds(RunConfig& c) {
  c.vqa_model.seed = c.vqa_train.seed;
  c.diffusion.model.seed = c.diffusion.train.seed;
}

inline std::string to_ini(const RunConfig& c) {
  std::ostringstream out;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) out << '\n';
      section = f.section;
      out << '[' << section << "]\n";
    }
    out << "# " << f.help << '\n' << f.key << " = " << f.get(c) << '\n';
  }
  return out.str();
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : fields()) j[f.section][f.key] = f.get(c);
  return j;
}

inline RunConfig parse_ini(std::istream& in, const std::string& origin = "config") {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  RunConfig c;
  for (const auto& [section, body] : tree) {
    const auto& all = fields();
    if (std::none_of(all.begin(), all.end(), [&](const Field& f) { return f.section == section; })) {
      throw ConfigError(origin + ": unknown section or key outside a section: " + section);
    }
    for (const auto& [key, value] : body) {
      const auto it = std::find_if(all.begin(), all.end(),
                                   [&](const Field& f) { return f.section == section && f.key == key; });
      if (it == all.end()) throw ConfigError(origin + ": unknown key [" + section + "] " + key);
      it->set(c, value.data());
    }
  }
  sync_seeds(c);
  c.validate();
  return c;
}

inline RunConfig load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  return parse_ini(in, path.string());
}

}  // namespace peftlab::config
