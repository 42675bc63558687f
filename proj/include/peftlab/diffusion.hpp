// SPDX-License-Identifier: Apache-2.0
//
// Conditional denoising diffusion over a small raw latent grid. The noise
// predictor is a stack of residual attention blocks whose projections can
// carry LoRA adapters; the latent maps to and from RGB by fixed pooling and
// nearest-neighbour upsampling.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "peftlab/archive.hpp"
#include "peftlab/dataset.hpp"
#include "peftlab/lora.hpp"
#include "peftlab/metrics.hpp"
#include "peftlab/nn.hpp"
#include "peftlab/optim.hpp"

namespace peftlab::diffusion {

struct DiffusionConfig {
  std::size_t timesteps = 100;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::size_t latent_size = 8;  // latent is latent_size x latent_size x 3
  std::size_t cond_dim = 32;
  std::size_t hidden = 32;
  std::size_t heads = 2;
  std::size_t blocks = 3;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0)) {
      throw ConfigError("diffusion: need 0 < beta_start < beta_end < 1");
    }
    if (timesteps < 2) throw ConfigError("diffusion: timesteps must be >= 2");
    if (latent_size == 0 || cond_dim == 0 || blocks == 0) throw ConfigError("diffusion: sizes must be >= 1");
    if (heads == 0 || hidden % heads != 0) throw ConfigError("diffusion: hidden not divisible by heads");
  }

  std::size_t tokens() const { return latent_size * latent_size; }
};

inline nlohmann::json to_json(const DiffusionConfig& c) {
  return {{"timesteps", c.timesteps}, {"beta_start", c.beta_start}, {"beta_end", c.beta_end},
          {"latent_size", c.latent_size}, {"cond_dim", c.cond_dim}, {"hidden", c.hidden},
          {"heads", c.heads}, {"blocks", c.blocks}, {"seed", c.seed}};
}

inline DiffusionConfig diffusion_config_from_json(const nlohmann::json& j) {
  DiffusionConfig c;
  c.timesteps = j.at("timesteps");
  c.beta_start = j.at("beta_start");
  c.beta_end = j.at("beta_end");
  c.latent_size = j.at("latent_size");
  c.cond_dim = j.at("cond_dim");
  c.hidden = j.at("hidden");
  c.heads = j.at("heads");
  c.blocks = j.at("blocks");
  c.seed = j.at("seed");
  return c;
}

// Linear beta schedule with cumulative products ᾱ_t = Π_{s<=t} (1 − β_s).
struct NoiseSchedule {
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  explicit NoiseSchedule(const DiffusionConfig& cfg) {
    cfg.validate();
    const std::size_t n = cfg.timesteps;
    double bar = 1.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double beta =
          cfg.beta_start + (cfg.beta_end - cfg.beta_start) * static_cast<double>(t) / static_cast<double>(n - 1);
      betas.push_back(beta);
      alphas.push_back(1.0 - beta);
      bar *= 1.0 - beta;
      alpha_bars.push_back(bar);
    }
  }

  std::size_t size() const { return betas.size(); }

  void check(std::size_t t) const {
    if (t >= size()) {
      throw ContractError("diffusion: timestep " + std::to_string(t) + " outside [0, " +
                          std::to_string(size()) + ")");
    }
  }
};

// x_t = √ᾱ_t x0 + √(1 − ᾱ_t) ε.
inline Tensor q_sample(const NoiseSchedule& s, const Tensor& x0, std::size_t t, const Tensor& noise) {
  s.check(t);
  if (x0.shape() != noise.shape()) {
    throw DimensionError("q_sample: x0 " + shape_str(x0.shape()) + " vs noise " + shape_str(noise.shape()));
  }
  return add(scale(x0, std::sqrt(s.alpha_bars[t])), scale(noise, std::sqrt(1.0 - s.alpha_bars[t])));
}

// Mean-pooled hashed word vectors; the same prompt always embeds the same way.
class PromptEmbedder {
 public:
  PromptEmbedder(std::uint64_t seed, std::size_t dim) : seed_(seed), dim_(dim) {}

  Tensor operator()(const std::string& prompt) const {
    std::vector<double> out(dim_, 0.0);
    const auto words = text::normalize_words(prompt);
    for (const auto& w : words) {
      const auto v = hashed_word_vector(w, seed_, dim_);
      for (std::size_t i = 0; i < dim_; ++i) out[i] += v[i];
    }
    if (!words.empty())
      for (auto& v : out) v /= static_cast<double>(words.size());
    return Tensor({dim_}, std::move(out));
  }

  std::size_t dim() const { return dim_; }

 private:
  std::uint64_t seed_;
  std::size_t dim_;
};

// The embedder a model of this configuration is trained and sampled with.
inline PromptEmbedder prompt_embedder(const DiffusionConfig& c) { return PromptEmbedder(c.seed ^ 0xc0de, c.cond_dim); }

inline std::vector<double> timestep_embedding(std::size_t t, std::size_t dim) {
  std::vector<double> out(dim);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
    out[i] = std::sin(static_cast<double>(t) * freq);
    out[half + i] = std::cos(static_cast<double>(t) * freq);
  }
  return out;
}

// ε_θ(x_t, t, c): latent tokens [tokens x 3] -> predicted noise of the same shape.
class NoisePredictor {
 public:
  struct ResidualBlock {
    LayerNorm ln_attn, ln_ff;
    MultiHeadAttention attn;
    FeedForward ff;

    ResidualBlock(const std::string& name, const DiffusionConfig& c, Rng& rng)
        : ln_attn(name + ".ln_attn", c.hidden),
          ln_ff(name + ".ln_ff", c.hidden),
          attn(name + ".attn", c.hidden, c.heads, rng),
          ff(name, c.hidden, 2 * c.hidden, rng) {}

    Tensor operator()(Tensor x) const {
      const Tensor h = ln_attn(x);
      x = add(x, attn(h, h));
      return add(x, ff(ln_ff(x)));
    }

    // Attention projections plus the feed-forward pair.
    std::map<std::string, Linear*> projections() {
      auto out = attn.projections();
      out["ff_in"] = &ff.up;
      out["ff_out"] = &ff.down;
      return out;
    }

    ParameterList parameters() {
      ParameterList out = ln_attn.parameters();
      append(out, attn.parameters());
      append(out, ln_ff.parameters());
      append(out, ff.parameters());
      return out;
    }
  };

  explicit NoisePredictor(const DiffusionConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = derive_rng(cfg_.seed, 0xd1ff);
    in_proj_ = Linear("unet.in_proj", 3, cfg_.hidden, rng);
    pos_ = Parameter("unet.pos", Tensor::randn({cfg_.tokens(), cfg_.hidden}, 0.1, rng));
    time_proj_ = Linear("unet.time_proj", cfg_.hidden, cfg_.hidden, rng);
    cond_proj_ = Linear("unet.cond_proj", cfg_.cond_dim, cfg_.hidden, rng);
    for (std::size_t i = 0; i < cfg_.blocks; ++i) blocks_.emplace_back("unet.block" + std::to_string(i), cfg_, rng);
    out_ln_ = LayerNorm("unet.ln_out", cfg_.hidden);
    out_proj_ = Linear("unet.out_proj", cfg_.hidden, 3, rng);
  }

  NoisePredictor(const NoisePredictor&) = delete;
  NoisePredictor& operator=(const NoisePredictor&) = delete;

  Tensor predict(const Tensor& x_t, std::size_t t, const Tensor& cond) const {
    if (x_t.shape() != Shape{cfg_.tokens(), 3}) {
      throw DimensionError("noise predictor: latent " + shape_str(x_t.shape()) + ", expected " +
                           shape_str({cfg_.tokens(), 3}));
    }
    const Tensor temb = gelu(time_proj_(Tensor({1, cfg_.hidden}, timestep_embedding(t, cfg_.hidden))));
    const Tensor context = add(temb, cond_proj_(reshape(cond, {1, cfg_.cond_dim})));
    Tensor h = add_row(add(in_proj_(x_t), pos_.tensor), reshape(context, {cfg_.hidden}));
    for (const auto& b : blocks_) h = b(h);
    return out_proj_(out_ln_(h));
  }

  const DiffusionConfig& config() const { return cfg_; }

  std::vector<std::map<std::string, Linear*>> block_projections() {
    std::vector<std::map<std::string, Linear*>> out;
    for (auto& b : blocks_) out.push_back(b.projections());
    return out;
  }

  ParameterList parameters() {
    ParameterList out = in_proj_.parameters();
    out.push_back(&pos_);
    append(out, time_proj_.parameters());
    append(out, cond_proj_.parameters());
    for (auto& b : blocks_) append(out, b.parameters());
    append(out, out_ln_.parameters());
    append(out, out_proj_.parameters());
    return out;
  }

  // Parameters that are not LoRA factors.
  ParameterList base_parameters() {
    ParameterList out;
    for (auto* p : parameters())
      if (!is_lora(*p)) out.push_back(p);
    return out;
  }

  ParameterList lora_parameters() {
    ParameterList out;
    for (auto* p : parameters())
      if (is_lora(*p)) out.push_back(p);
    return out;
  }

  std::vector<Linear*> adapted_layers() {
    std::vector<Linear*> out;
    for (auto& m : block_projections())
      for (auto& [_, l] : m)
        if (l->adapter) out.push_back(l);
    return out;
  }

  static bool is_lora(const Parameter& p) {
    const auto ends = [&](std::string_view s) {
      return p.name.size() >= s.size() && p.name.compare(p.name.size() - s.size(), s.size(), s) == 0;
    };
    return ends(".lora_a") || ends(".lora_b");
  }

 private:
  DiffusionConfig cfg_;
  Linear in_proj_;
  Parameter pos_;
  Linear time_proj_, cond_proj_;
  std::vector<ResidualBlock> blocks_;
  LayerNorm out_ln_;
  Linear out_proj_;
};

// Freezes every base parameter and attaches adapters to the configured
// projections of each residual block.
inline void inject_lora(NoisePredictor& model, const lora::LoraConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  freeze_all(model.parameters());
  Rng rng = derive_rng(seed, 0x10ad);
  for (auto& projections : model.block_projections()) lora::inject(projections, cfg, rng);
}

// --- latent codec --------------------------------------------------------------

// Average-pools an image onto the latent grid and maps [0, 1] to [-1, 1].
inline Tensor encode_latent(const Image& image, std::size_t latent_size) {
  if (image.height != image.width || image.height % latent_size != 0) {
    throw DimensionError("encode_latent: image " + std::to_string(image.height) + "x" +
                         std::to_string(image.width) + " does not tile a " +
                         std::to_string(latent_size) + " grid");
  }
  const std::size_t f = image.height / latent_size;
  std::vector<double> out(latent_size * latent_size * 3, 0.0);
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) out[((y / f) * latent_size + x / f) * 3 + c] += image.at(y, x, c);
  const double inv = 1.0 / static_cast<double>(f * f);
  for (auto& v : out) v = 2.0 * v * inv - 1.0;
  return Tensor({latent_size * latent_size, 3}, std::move(out));
}

// Nearest-neighbour upsampling with pixel = 0.5 + 0.5 * latent, clamped.
inline Image decode_latent(const Tensor& latent, std::size_t latent_size, std::size_t image_size) {
  if (latent.shape() != Shape{latent_size * latent_size, 3} || image_size % latent_size != 0) {
    throw DimensionError("decode_latent: latent " + shape_str(latent.shape()) + " vs image " +
                         std::to_string(image_size));
  }
  const std::size_t f = image_size / latent_size;
  Image im = Image::blank(image_size, image_size);
  const auto d = latent.data();
  for (std::size_t y = 0; y < image_size; ++y)
    for (std::size_t x = 0; x < image_size; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        im.at(y, x, c) = std::clamp(0.5 + 0.5 * d[((y / f) * latent_size + x / f) * 3 + c], 0.0, 1.0);
  return im;
}

// --- loss and sampling -----------------------------------------------------------

// ε-prediction MSE at a uniformly drawn timestep. Works with any model that
// exposes predict(x_t, t, cond).
template <typename Model>
Tensor denoise_loss(const Model& model, const NoiseSchedule& s, const Tensor& x0, const Tensor& cond, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, s.size() - 1);
  const std::size_t t = pick(rng);
  const Tensor noise = Tensor::randn(x0.shape(), 1.0, rng);
  return mse(model.predict(q_sample(s, x0, t, noise), t, cond), noise);
}

// Ancestral sampler. Draws x_T ~ N(0, I) first, then one noise tensor per
// step t > 0: x_{t−1} = (x_t − β_t/√(1−ᾱ_t) ε_θ) / √α_t + √β_t z.
template <typename Model>
Tensor p_sample_loop(const Model& model, const NoiseSchedule& s, const Tensor& cond, Shape latent_shape, Rng& rng) {
  NoGradGuard no_grad;
  Tensor x = Tensor::randn(latent_shape, 1.0, rng);
  for (std::size_t t = s.size(); t-- > 0;) {
    const Tensor eps = model.predict(x, t, cond);
    const double coef = s.betas[t] / std::sqrt(1.0 - s.alpha_bars[t]);
    Tensor mean = scale(sub(x, scale(eps, coef)), 1.0 / std::sqrt(s.alphas[t]));
    if (t > 0) {
      mean = add(mean, scale(Tensor::randn(latent_shape, 1.0, rng), std::sqrt(s.betas[t])));
    }
    x = mean;
  }
  return x;
}

// One image per prompt; sample i uses its own stream derived from (seed, i),
// so results do not depend on batch order.
inline std::vector<Image> generate_images(const NoisePredictor& model, const NoiseSchedule& s,
                                          const PromptEmbedder& embed, const std::vector<std::string>& prompts,
                                          std::uint64_t seed, std::size_t image_size) {
  const auto& c = model.config();
  std::vector<Image> out;
  out.reserve(prompts.size());
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    Rng rng = derive_rng(seed, 0x5a3b, i);
    const Tensor z = p_sample_loop(model, s, embed(prompts[i]), {c.tokens(), 3}, rng);
    out.push_back(decode_latent(z, c.latent_size, image_size));
  }
  return out;
}

// --- training ---------------------------------------------------------------------

struct DiffusionTrainConfig {
  optim::AdamWConfig adamw{1e-4, 0.9, 0.999, 1e-8, 0.01};
  std::size_t warmup_steps = 500;
  double min_lr = 0.0;
  std::size_t batch_size = 4;
  std::size_t accumulation_steps = 2;
  std::size_t epochs = 10;
  double clip_norm = 1.0;
  std::size_t eval_samples = 8;  // generated images per epoch report
  std::uint64_t seed = 0;
  std::uint64_t eval_seed = 1234;
  std::uint64_t feature_seed = 0;
};

struct DiffusionEpoch {
  std::size_t epoch = 0;  // 1-based; 0 is the untrained baseline
  double train_loss = 0.0;
  metrics::GenReport report;
};

struct TrainingPair {
  Tensor latent;
  Tensor cond;
  std::string prompt;
};

// Trains whatever is trainable in the model (the adapters, once injected)
// and scores a fixed generated batch after every epoch.
class DiffusionTrainer {
 public:
  DiffusionTrainer(NoisePredictor& model, const std::vector<Image>& images,
                   const std::vector<std::string>& prompts, DiffusionTrainConfig cfg)
      : model_(model),
        schedule_(model.config()),
        embed_(prompt_embedder(model.config())),
        cfg_(cfg),
        optimizer_(model.parameters(), cfg.adamw) {
    if (prompts.empty()) throw InputError("train_diffusion: empty prompt set");
    if (images.size() != prompts.size()) {
      throw InputError("train_diffusion: " + std::to_string(images.size()) + " images but " +
                       std::to_string(prompts.size()) + " prompts");
    }
    if (cfg_.batch_size == 0 || cfg_.epochs == 0) throw ConfigError("train_diffusion: batch_size and epochs must be >= 1");
    const std::size_t ls = model.config().latent_size;
    image_size_ = images.front().height;
    for (std::size_t i = 0; i < images.size(); ++i) {
      Tensor z = encode_latent(images[i], ls);
      reference_.push_back(decode_latent(z, ls, image_size_));
      pairs_.push_back({std::move(z), embed_(prompts[i]), prompts[i]});
    }
    for (std::size_t i = 0; i < cfg_.eval_samples; ++i) eval_prompts_.push_back(prompts[i % prompts.size()]);
    const std::size_t batches = (pairs_.size() + cfg_.batch_size - 1) / cfg_.batch_size;
    schedule_cfg_.peak_lr = cfg_.adamw.learning_rate;
    schedule_cfg_.min_lr = cfg_.min_lr;
    schedule_cfg_.total_steps = ((batches + cfg_.accumulation_steps - 1) / cfg_.accumulation_steps) * cfg_.epochs;
    schedule_cfg_.warmup_steps = cfg_.warmup_steps;
    if (schedule_cfg_.warmup_steps >= schedule_cfg_.total_steps) {
      schedule_cfg_.warmup_steps = schedule_cfg_.total_steps / 10;
      warmup_clamped_ = true;
    }
    accumulator_.emplace(optimizer_, schedule_cfg_, cfg_.accumulation_steps, cfg_.clip_norm);
  }

  const NoiseSchedule& noise_schedule() const { return schedule_; }
  const optim::ScheduleConfig& lr_schedule() const { return schedule_cfg_; }
  const PromptEmbedder& embedder() const { return embed_; }
  bool warmup_clamped() const { return warmup_clamped_; }
  std::size_t epochs_done() const { return epoch_; }
  const std::vector<Image>& reference_images() const { return reference_; }
  const std::vector<std::string>& eval_prompts() const { return eval_prompts_; }

  double run_epoch_loss() {
    if (epoch_ >= cfg_.epochs) throw ContractError("train_diffusion: all epochs already run");
    std::vector<std::size_t> order(pairs_.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = derive_rng(cfg_.seed, 0xe90c, epoch_);
    std::shuffle(order.begin(), order.end(), shuffle);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
      Tensor batch_loss;
      for (std::size_t i = start; i < end; ++i) {
        Rng rng = derive_rng(cfg_.seed, 0x1055, epoch_, i);
        const auto& p = pairs_[order[i]];
        Tensor l = denoise_loss(model_, schedule_, p.latent, p.cond, rng);
        batch_loss = batch_loss.defined() ? add(batch_loss, l) : l;
      }
      batch_loss = scale(batch_loss, 1.0 / static_cast<double>(end - start));
      loss_sum += batch_loss.item();
      ++batches;
      accumulator_->micro_step(batch_loss);
    }
    accumulator_->flush();
    ++epoch_;
    return loss_sum / static_cast<double>(batches);
  }

  DiffusionEpoch run_epoch() {
    DiffusionEpoch e;
    e.train_loss = run_epoch_loss();
    e.epoch = epoch_;
    e.report = evaluate();
    return e;
  }

  std::vector<DiffusionEpoch> train() {
    std::vector<DiffusionEpoch> out;
    while (epoch_ < cfg_.epochs) out.push_back(run_epoch());
    return out;
  }

  std::vector<Image> sample_batch() const {
    return generate_images(model_, schedule_, embed_, eval_prompts_, cfg_.eval_seed, image_size_);
  }

  // Generation report of the fixed evaluation batch against the reference set.
  metrics::GenReport evaluate() const {
    const metrics::FeatureExtractor fx(cfg_.feature_seed);
    return metrics::evaluate_generation(reference_, sample_batch(), eval_prompts_, fx);
  }

  // Mean denoise loss over the corpus at fixed per-example draws.
  double held_loss(std::uint64_t seed) const {
    NoGradGuard no_grad;
    double total = 0.0;
    for (std::size_t i = 0; i < pairs_.size(); ++i) {
      Rng rng = derive_rng(seed, 0x4e1d, i);
      total += denoise_loss(model_, schedule_, pairs_[i].latent, pairs_[i].cond, rng).item();
    }
    return total / static_cast<double>(pairs_.size());
  }

 private:
  NoisePredictor& model_;
  NoiseSchedule schedule_;
  PromptEmbedder embed_;
  DiffusionTrainConfig cfg_;
  optim::AdamW optimizer_;
  optim::ScheduleConfig schedule_cfg_;
  std::optional<optim::GradientAccumulator> accumulator_;
  bool warmup_clamped_ = false;
  std::size_t epoch_ = 0;
  std::size_t image_size_ = 0;
  std::vector<TrainingPair> pairs_;
  std::vector<Image> reference_;
  std::vector<std::string> eval_prompts_;
};

// Untrained baseline report followed by one report per epoch.
inline std::vector<DiffusionEpoch> train_diffusion(NoisePredictor& model, const std::vector<Image>& images,
                                                   const std::vector<std::string>& prompts,
                                                   const DiffusionTrainConfig& cfg) {
  DiffusionTrainer trainer(model, images, prompts, cfg);
  std::vector<DiffusionEpoch> out{{0, trainer.held_loss(cfg.seed), trainer.evaluate()}};
  for (auto& e : trainer.train()) out.push_back(std::move(e));
  return out;
}

// --- adapters on disk ----------------------------------------------------------------

inline void save_adapters(const std::filesystem::path& stem, NoisePredictor& model, const lora::LoraConfig& cfg,
                          nlohmann::json meta = nlohmann::json::object()) {
  archive::Archive a = archive::from_parameters(model.lora_parameters());
  meta["rank"] = cfg.rank;
  meta["alpha"] = cfg.alpha;
  meta["targets"] = cfg.target_projections;
  meta["config"] = to_json(model.config());
  a.meta = std::move(meta);
  archive::save(stem, a);
}

inline lora::LoraConfig adapter_config(const archive::Archive& a) {
  lora::LoraConfig cfg;
  cfg.rank = a.meta.at("rank").get<std::size_t>();
  cfg.alpha = a.meta.at("alpha").get<double>();
  cfg.target_projections = a.meta.at("targets").get<std::set<std::string>>();
  return cfg;
}

// Copies archived adapter factors into a model that already carries adapters
// of the same rank and targets.
inline void load_adapters(const archive::Archive& a, NoisePredictor& model) {
  archive::load_into(a, model.lora_parameters());
}

// --- rank sweep ------------------------------------------------------------------------

struct RankSweepRow {
  std::size_t rank = 0;
  std::size_t trainable = 0;
  std::size_t expected = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

// Fresh copies of the same base for each rank, trained on the same data.
// `prepare_base` may load or pretrain base weights before adapters attach.
template <typename PrepareBase>
std::vector<RankSweepRow> rank_sweep(const DiffusionConfig& model_cfg, const std::vector<std::size_t>& ranks,
                                     const std::vector<Image>& images, const std::vector<std::string>& prompts,
                                     const DiffusionTrainConfig& cfg, PrepareBase&& prepare_base) {
  std::vector<RankSweepRow> rows;
  for (auto r : ranks) {
    NoisePredictor model(model_cfg);
    prepare_base(model);
    inject_lora(model, lora::config_for_rank(r), cfg.seed);
    DiffusionTrainConfig c = cfg;
    c.eval_samples = 2;
    DiffusionTrainer trainer(model, images, prompts, c);
    RankSweepRow row;
    row.rank = r;
    row.trainable = count_trainable(model.parameters());
    row.expected = lora::expected_trainable(model.adapted_layers());
    row.initial_loss = trainer.held_loss(cfg.seed);
    while (trainer.epochs_done() < cfg.epochs) trainer.run_epoch_loss();
    row.final_loss = trainer.held_loss(cfg.seed);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace peftlab::diffusion
