// SPDX-License-Identifier: Apache-2.0
//
// Encoder-decoder visual question answering at desk scale.
//
//   image -> patches -> vision encoder (frozen by default)        -> V [N x d]
//   question -> text encoder: self-attn, cross-attn to V, FFN      -> M [Q x d]
//   <bos> a_1 .. -> decoder: causal self-attn, cross-attn to M, FFN -> logits
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "peftlab/archive.hpp"
#include "peftlab/dataset.hpp"
#include "peftlab/lora.hpp"
#include "peftlab/metrics.hpp"
#include "peftlab/nn.hpp"
#include "peftlab/optim.hpp"

namespace peftlab::vqa {

using data::TokenId;
using data::Vocabulary;

struct VqaConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t vision_layers = 2;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t ff_multiplier = 2;
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t vocab_size = 0;
  std::size_t max_question_len = 16;
  std::size_t max_answer_len = 8;
  bool freeze_vision = true;
  std::size_t lora_rank = 0;  // 0 trains text encoder and decoder in full
  double lora_alpha = 0.0;    // 0 means alpha = rank
  std::uint64_t seed = 0;

  void validate() const {
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
      throw ConfigError("vqa: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                        std::to_string(n_heads));
    }
    if (patch_size == 0 || image_size % patch_size != 0) {
      throw ConfigError("vqa: image_size " + std::to_string(image_size) +
                        " not divisible by patch_size " + std::to_string(patch_size));
    }
    if (vocab_size <= Vocabulary::kUnk) throw ConfigError("vqa: vocab_size too small");
    if (max_answer_len == 0 || max_question_len == 0) throw ConfigError("vqa: lengths must be >= 1");
  }

  std::size_t num_patches() const { return (image_size / patch_size) * (image_size / patch_size); }
  std::size_t patch_dim() const { return patch_size * patch_size * 3; }
};

inline nlohmann::json to_json(const VqaConfig& c) {
  return {{"d_model", c.d_model},           {"n_heads", c.n_heads},
          {"vision_layers", c.vision_layers}, {"encoder_layers", c.encoder_layers},
          {"decoder_layers", c.decoder_layers}, {"ff_multiplier", c.ff_multiplier},
          {"image_size", c.image_size},     {"patch_size", c.patch_size},
          {"vocab_size", c.vocab_size},     {"max_question_len", c.max_question_len},
          {"max_answer_len", c.max_answer_len}, {"freeze_vision", c.freeze_vision},
          {"lora_rank", c.lora_rank},       {"lora_alpha", c.lora_alpha},
          {"seed", c.seed}};
}

inline VqaConfig vqa_config_from_json(const nlohmann::json& j) {
  VqaConfig c;
  c.d_model = j.at("d_model");
  c.n_heads = j.at("n_heads");
  c.vision_layers = j.at("vision_layers");
  c.encoder_layers = j.at("encoder_layers");
  c.decoder_layers = j.at("decoder_layers");
  c.ff_multiplier = j.at("ff_multiplier");
  c.image_size = j.at("image_size");
  c.patch_size = j.at("patch_size");
  c.vocab_size = j.at("vocab_size");
  c.max_question_len = j.at("max_question_len");
  c.max_answer_len = j.at("max_answer_len");
  c.freeze_vision = j.at("freeze_vision");
  c.lora_rank = j.at("lora_rank");
  c.lora_alpha = j.at("lora_alpha");
  c.seed = j.at("seed");
  return c;
}

namespace detail {

inline std::vector<std::size_t> positions(std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  return p;
}

// Pre-norm block: self-attention, optional cross-attention, feed-forward.
struct Block {
  LayerNorm ln_self, ln_cross, ln_ff;
  MultiHeadAttention self_attn;
  std::optional<MultiHeadAttention> cross_attn;
  FeedForward ff;

  Block(const std::string& name, const VqaConfig& c, bool with_cross, Rng& rng)
      : ln_self(name + ".ln_self", c.d_model),
        ln_cross(name + ".ln_cross", c.d_model),
        ln_ff(name + ".ln_ff", c.d_model),
        self_attn(name + ".self_attn", c.d_model, c.n_heads, rng),
        ff(name, c.d_model, c.d_model * c.ff_multiplier, rng) {
    if (with_cross) cross_attn.emplace(name + ".cross_attn", c.d_model, c.n_heads, rng);
  }

  Tensor operator()(Tensor x, const Tensor* memory, const Tensor* mask) const {
    const Tensor h = ln_self(x);
    x = add(x, self_attn(h, h, mask));
    if (cross_attn) x = add(x, (*cross_attn)(ln_cross(x), *memory));
    return add(x, ff(ln_ff(x)));
  }

  ParameterList parameters() {
    ParameterList out = ln_self.parameters();
    append(out, self_attn.parameters());
    if (cross_attn) {
      append(out, ln_cross.parameters());
      append(out, cross_attn->parameters());
    }
    append(out, ln_ff.parameters());
    append(out, ff.parameters());
    return out;
  }
};

}  // namespace detail

class VqaModel {
 public:
  explicit VqaModel(const VqaConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = derive_rng(cfg_.seed, 0x7691);
    const std::size_t d = cfg_.d_model;
    patch_embed_ = Linear("vision.patch_embed", cfg_.patch_dim(), d, rng);
    vision_pos_ = Parameter("vision.pos", Tensor::randn({cfg_.num_patches(), d}, 0.1, rng));
    for (std::size_t i = 0; i < cfg_.vision_layers; ++i)
      vision_blocks_.emplace_back("vision.block" + std::to_string(i), cfg_, false, rng);
    vision_ln_ = LayerNorm("vision.ln_out", d);

    text_embed_ = Parameter("text.embed", Tensor::randn({cfg_.vocab_size, d}, 0.1, rng));
    text_pos_ = Parameter("text.pos", Tensor::randn({cfg_.max_question_len, d}, 0.1, rng));
    for (std::size_t i = 0; i < cfg_.encoder_layers; ++i)
      text_blocks_.emplace_back("text.block" + std::to_string(i), cfg_, true, rng);
    text_ln_ = LayerNorm("text.ln_out", d);

    dec_embed_ = Parameter("decoder.embed", Tensor::randn({cfg_.vocab_size, d}, 0.1, rng));
    dec_pos_ = Parameter("decoder.pos", Tensor::randn({cfg_.max_answer_len, d}, 0.1, rng));
    for (std::size_t i = 0; i < cfg_.decoder_layers; ++i)
      dec_blocks_.emplace_back("decoder.block" + std::to_string(i), cfg_, true, rng);
    dec_ln_ = LayerNorm("decoder.ln_out", d);
    head_ = Linear("decoder.head", d, cfg_.vocab_size, rng, true, 0.02);

    if (cfg_.freeze_vision) freeze_all(vision_parameters());
    if (cfg_.lora_rank > 0) {
      freeze_all(text_parameters());
      freeze_all(decoder_parameters());
      lora::LoraConfig lc;
      lc.rank = cfg_.lora_rank;
      lc.alpha = cfg_.lora_alpha > 0 ? cfg_.lora_alpha : static_cast<double>(cfg_.lora_rank);
      Rng lora_rng = derive_rng(cfg_.seed, 0x10ad);
      for (auto* attn : language_attention()) lora::inject(attn->projections(), lc, lora_rng);
    }
  }

  VqaModel(const VqaModel&) = delete;
  VqaModel& operator=(const VqaModel&) = delete;

  const VqaConfig& config() const { return cfg_; }

  // [num_patches x patch_dim], row-major patches, pixels centered to [-1, 1].
  Tensor patchify(const Image& image) const {
    if (image.height != cfg_.image_size || image.width != cfg_.image_size) {
      throw DimensionError("vqa: expected " + std::to_string(cfg_.image_size) + "x" +
                           std::to_string(cfg_.image_size) + " image, got " +
                           std::to_string(image.height) + "x" + std::to_string(image.width));
    }
    const std::size_t p = cfg_.patch_size, per_row = cfg_.image_size / p;
    std::vector<double> out;
    out.reserve(cfg_.num_patches() * cfg_.patch_dim());
    for (std::size_t py = 0; py < per_row; ++py)
      for (std::size_t px = 0; px < per_row; ++px)
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x)
            for (std::size_t c = 0; c < 3; ++c) out.push_back(2.0 * image.at(py * p + y, px * p + x, c) - 1.0);
    return Tensor({cfg_.num_patches(), cfg_.patch_dim()}, std::move(out));
  }

  Tensor encode_patches(const Tensor& patches) const {
    Tensor x = add(patch_embed_(patches), vision_pos_.tensor);
    for (const auto& b : vision_blocks_) x = b(x, nullptr, nullptr);
    return vision_ln_(x);
  }

  Tensor encode_image(const Image& image) const { return encode_patches(patchify(image)); }

  Tensor encode_question(const Tensor& vision, std::span<const TokenId> question) const {
    if (question.empty() || question.front() != Vocabulary::kMedVqa) {
      throw ContractError("vqa: question must begin with the <MedVQA> token");
    }
    if (question.size() > cfg_.max_question_len) {
      throw InputError("vqa: question of " + std::to_string(question.size()) +
                       " tokens exceeds max_question_len " + std::to_string(cfg_.max_question_len));
    }
    const auto pos = detail::positions(question.size());
    Tensor x = add(embedding(text_embed_.tensor, question), embedding(text_pos_.tensor, pos));
    for (const auto& b : text_blocks_) x = b(x, &vision, nullptr);
    return text_ln_(x);
  }

  // Logits [T x V] for decoder inputs <bos> y_1 .. y_{T-1}.
  Tensor decode(const Tensor& memory, std::span<const TokenId> inputs) const {
    if (inputs.empty() || inputs.size() > cfg_.max_answer_len) {
      throw InputError("vqa: decoder input length " + std::to_string(inputs.size()) +
                       " outside [1, " + std::to_string(cfg_.max_answer_len) + "]");
    }
    const auto pos = detail::positions(inputs.size());
    Tensor x = add(embedding(dec_embed_.tensor, inputs), embedding(dec_pos_.tensor, pos));
    const Tensor mask = causal_mask(inputs.size());
    for (const auto& b : dec_blocks_) x = b(x, &memory, &mask);
    return head_(dec_ln_(x));
  }

  // Teacher-forced logits for an answer that ends with <eos>.
  Tensor answer_logits(const Tensor& vision, std::span<const TokenId> question,
                       std::span<const TokenId> answer) const {
    std::vector<TokenId> inputs{Vocabulary::kBos};
    inputs.insert(inputs.end(), answer.begin(), answer.end() - 1);
    return decode(encode_question(vision, question), inputs);
  }

  ParameterList vision_parameters() {
    ParameterList out = patch_embed_.parameters();
    out.push_back(&vision_pos_);
    for (auto& b : vision_blocks_) append(out, b.parameters());
    append(out, vision_ln_.parameters());
    return out;
  }

  ParameterList text_parameters() {
    ParameterList out{&text_embed_, &text_pos_};
    for (auto& b : text_blocks_) append(out, b.parameters());
    append(out, text_ln_.parameters());
    return out;
  }

  ParameterList decoder_parameters() {
    ParameterList out{&dec_embed_, &dec_pos_};
    for (auto& b : dec_blocks_) append(out, b.parameters());
    append(out, dec_ln_.parameters());
    append(out, head_.parameters());
    return out;
  }

  ParameterList parameters() {
    ParameterList out = vision_parameters();
    append(out, text_parameters());
    append(out, decoder_parameters());
    return out;
  }

  // Every attention module outside the vision encoder.
  std::vector<MultiHeadAttention*> language_attention() {
    std::vector<MultiHeadAttention*> out;
    for (auto* blocks : {&text_blocks_, &dec_blocks_})
      for (auto& b : *blocks) {
        out.push_back(&b.self_attn);
        if (b.cross_attn) out.push_back(&*b.cross_attn);
      }
    return out;
  }

  const MultiHeadAttention& text_cross_attention(std::size_t layer) const {
    return *text_blocks_.at(layer).cross_attn;
  }

 private:
  VqaConfig cfg_;
  Linear patch_embed_;
  Parameter vision_pos_;
  std::vector<detail::Block> vision_blocks_;
  LayerNorm vision_ln_;
  Parameter text_embed_, text_pos_;
  std::vector<detail::Block> text_blocks_;
  LayerNorm text_ln_;
  Parameter dec_embed_, dec_pos_;
  std::vector<detail::Block> dec_blocks_;
  LayerNorm dec_ln_;
  Linear head_;
};

// Multi-head cross-attention with queries from text and keys/values from
// vision. Thin wrapper that names the operation.
inline Tensor cross_attention(const MultiHeadAttention& attn, const Tensor& q_states,
                              const Tensor& kv_states) {
  return attn(q_states, kv_states);
}

inline std::vector<TokenId> answer_tokens(const Vocabulary& vocab, const std::vector<std::string>& words) {
  auto ids = vocab.encode_words(words);
  ids.push_back(Vocabulary::kEos);
  return ids;
}

// Mean token cross-entropy of the answer under teacher forcing, given
// precomputed vision features.
inline Tensor vqa_loss_from_features(const VqaModel& model, const Tensor& vision,
                                     std::span<const TokenId> question,
                                     std::span<const TokenId> answer) {
  if (answer.empty()) throw InputError("vqa_loss: empty answer");
  if (answer.back() != Vocabulary::kEos) throw ContractError("vqa_loss: answer must end with <eos>");
  return cross_entropy(model.answer_logits(vision, question, answer), answer);
}

inline Tensor vqa_loss(const VqaModel& model, const Image& image, std::span<const TokenId> question,
                       std::span<const TokenId> answer) {
  return vqa_loss_from_features(model, model.encode_image(image), question, answer);
}

// Greedy decoding; stops after <eos> (which is included) or max_answer_len tokens.
inline std::vector<TokenId> generate_from_features(const VqaModel& model, const Tensor& vision,
                                                   std::span<const TokenId> question) {
  NoGradGuard no_grad;
  const Tensor memory = model.encode_question(vision, question);
  std::vector<TokenId> inputs{Vocabulary::kBos}, out;
  while (out.size() < model.config().max_answer_len) {
    const Tensor logits = model.decode(memory, inputs);
    const auto d = logits.data();
    const std::size_t v = logits.cols(), last = logits.rows() - 1;
    const auto row = d.subspan(last * v, v);
    const auto next = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
    out.push_back(next);
    if (next == Vocabulary::kEos) break;
    inputs.push_back(next);
  }
  return out;
}

inline std::vector<TokenId> generate_answer(const VqaModel& model, const Image& image,
                                            std::span<const TokenId> question) {
  NoGradGuard no_grad;
  return generate_from_features(model, model.encode_image(image), question);
}

// Supervised count classification on the vision encoder before it is frozen.
// Returns the mean loss of the last pass.
inline double warmup_vision(VqaModel& model, const std::vector<Image>& images,
                            const std::vector<int>& counts, std::size_t passes, double lr,
                            std::uint64_t seed) {
  if (images.size() != counts.size() || images.empty()) {
    throw InputError("warmup_vision: need one count per image");
  }
  auto params = model.vision_parameters();
  for (auto* p : params) p->unfreeze();
  Rng rng = derive_rng(seed, 0x3a7);
  Linear probe("vision.count_probe", model.config().d_model, data::kMaxPolyps + 1, rng);
  ParameterList trainable = params;
  append(trainable, probe.parameters());
  optim::AdamWConfig ac;
  ac.learning_rate = lr;
  optim::AdamW opt(trainable, ac);
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  double last = 0.0;
  for (std::size_t pass = 0; pass < passes; ++pass) {
    Rng shuffle = derive_rng(seed, 0x3a8, pass);
    std::shuffle(order.begin(), order.end(), shuffle);
    last = 0.0;
    for (auto i : order) {
      const Tensor pooled = reshape(mean_rows(model.encode_image(images[i])), {1, model.config().d_model});
      const std::size_t target = static_cast<std::size_t>(counts[i]);
      const Tensor loss = cross_entropy(probe(pooled), std::span<const std::size_t>(&target, 1));
      last += loss.item();
      backward(loss);
      opt.step(lr);
      opt.zero_grad();
    }
    last /= static_cast<double>(images.size());
  }
  if (model.config().freeze_vision) freeze_all(params);
  return last;
}

// --- training ------------------------------------------------------------------

struct VqaTrainConfig {
  optim::AdamWConfig adamw{};
  std::size_t warmup_steps = 200;
  double min_lr = 0.0;
  std::size_t batch_size = 2;
  std::size_t accumulation_steps = 8;
  std::size_t epochs = 10;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  metrics::MetricReport validation;
};

struct EncodedExample {
  std::string image_id;
  std::vector<TokenId> question;
  std::vector<TokenId> answer;  // ends with <eos>
  std::vector<std::string> reference;
};

inline std::vector<EncodedExample> encode_examples(const Vocabulary& vocab,
                                                   const std::vector<data::VqaExample>& examples) {
  std::vector<EncodedExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    out.push_back({ex.image_id, vocab.encode_words(ex.question), answer_tokens(vocab, ex.answer), ex.answer});
  }
  return out;
}

inline std::map<std::string, Image> image_index(const data::Corpus& corpus) {
  std::map<std::string, Image> out;
  for (const auto& im : corpus.images) out[im.id] = im.pixels;
  return out;
}

struct Prediction {
  std::string image_id;
  std::vector<std::string> question;
  std::vector<std::string> candidate;
  std::vector<std::string> reference;
};

// Owns optimizer state and the epoch counter so training can stop at an
// epoch boundary, checkpoint, and resume bit-exactly.
class VqaTrainer {
 public:
  VqaTrainer(VqaModel& model, const Vocabulary& vocab, const std::map<std::string, Image>& images,
             const std::vector<data::VqaExample>& train, const std::vector<data::VqaExample>& validation,
             VqaTrainConfig cfg)
      : model_(model),
        vocab_(vocab),
        images_(images),
        train_(encode_examples(vocab, train)),
        validation_(encode_examples(vocab, validation)),
        cfg_(cfg),
        optimizer_(model.parameters(), cfg.adamw) {
    if (train_.empty()) throw InputError("train_vqa: empty training set");
    if (cfg_.batch_size == 0 || cfg_.epochs == 0) throw ConfigError("train_vqa: batch_size and epochs must be >= 1");
    const std::size_t batches = (train_.size() + cfg_.batch_size - 1) / cfg_.batch_size;
    const std::size_t per_epoch = (batches + cfg_.accumulation_steps - 1) / cfg_.accumulation_steps;
    schedule_.peak_lr = cfg_.adamw.learning_rate;
    schedule_.total_steps = per_epoch * cfg_.epochs;
    schedule_.min_lr = cfg_.min_lr;
    schedule_.warmup_steps = cfg_.warmup_steps;
    if (schedule_.warmup_steps >= schedule_.total_steps) {
      schedule_.warmup_steps = schedule_.total_steps / 10;
      warmup_clamped_ = true;
    }
    accumulator_.emplace(optimizer_, schedule_, cfg_.accumulation_steps, cfg_.clip_norm);
  }

  const optim::ScheduleConfig& schedule() const { return schedule_; }
  bool warmup_clamped() const { return warmup_clamped_; }
  std::size_t epochs_done() const { return epoch_; }
  const optim::AdamW& optimizer() const { return optimizer_; }

  // One pass over the training set in a seed-derived order, then validation.
  EpochRecord run_epoch() {
    if (epoch_ >= cfg_.epochs) throw ContractError("train_vqa: all epochs already run");
    std::vector<std::size_t> order(train_.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng = derive_rng(cfg_.seed, 0xe90c, epoch_);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
      Tensor batch_loss;
      for (std::size_t i = start; i < end; ++i) {
        const auto& ex = train_[order[i]];
        Tensor l = vqa_loss_from_features(model_, vision(ex.image_id), ex.question, ex.answer);
        batch_loss = batch_loss.defined() ? add(batch_loss, l) : l;
      }
      batch_loss = scale(batch_loss, 1.0 / static_cast<double>(end - start));
      loss_sum += batch_loss.item();
      ++batches;
      accumulator_->micro_step(batch_loss);
    }
    accumulator_->flush();
    if (!model_.config().freeze_vision) cache_.clear();
    ++epoch_;
    EpochRecord rec;
    rec.epoch = epoch_;
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.validation = validation_.empty() ? metrics::MetricReport{} : evaluate(validation_);
    return rec;
  }

  std::vector<EpochRecord> train() {
    std::vector<EpochRecord> out;
    while (epoch_ < cfg_.epochs) out.push_back(run_epoch());
    return out;
  }

  metrics::MetricReport evaluate(const std::vector<EncodedExample>& examples,
                                 std::vector<Prediction>* predictions = nullptr) {
    std::vector<metrics::TextPair> pairs;
    for (const auto& ex : examples) {
      const auto tokens = generate_from_features(model_, vision_eval(ex.image_id), ex.question);
      pairs.push_back({vocab_.decode_words(tokens), ex.reference});
      if (predictions) {
        predictions->push_back({ex.image_id, vocab_.decode_words(ex.question), pairs.back().candidate,
                                ex.reference});
      }
    }
    return metrics::evaluate_text(pairs);
  }

  metrics::MetricReport evaluate_train() { return evaluate(train_); }
  metrics::MetricReport evaluate_validation() { return evaluate(validation_); }

  double mean_loss(const std::vector<EncodedExample>& examples) {
    NoGradGuard no_grad;
    double total = 0.0;
    for (const auto& ex : examples)
      total += vqa_loss_from_features(model_, vision_eval(ex.image_id), ex.question, ex.answer).item();
    return total / static_cast<double>(examples.size());
  }

  const std::vector<EncodedExample>& train_examples() const { return train_; }
  const std::vector<EncodedExample>& validation_examples() const { return validation_; }

  // Parameters, AdamW moments, step and epoch counters.
  void save_checkpoint(const std::filesystem::path& stem, nlohmann::json meta = nlohmann::json::object()) const {
    archive::Archive a = archive::from_parameters(model_.parameters());
    for (const auto& [name, st] : optimizer_.state()) {
      a.tensors.push_back({"adamw.m." + name, Tensor({st.m.size()}, st.m)});
      a.tensors.push_back({"adamw.v." + name, Tensor({st.v.size()}, st.v)});
    }
    meta["config"] = to_json(model_.config());
    meta["epoch"] = epoch_;
    meta["optimizer_steps"] = optimizer_.steps();
    meta["seed"] = cfg_.seed;
    a.meta = std::move(meta);
    archive::save(stem, a);
  }

  void load_checkpoint(const std::filesystem::path& stem) {
    const auto a = archive::load(stem);
    archive::load_into(a, model_.parameters());
    std::map<std::string, optim::MomentState> state;
    for (const auto& [name, _] : optimizer_.state()) {
      const auto m = a.at("adamw.m." + name).data();
      const auto v = a.at("adamw.v." + name).data();
      state[name] = {{m.begin(), m.end()}, {v.begin(), v.end()}};
    }
    optimizer_.restore(std::move(state), a.meta.at("optimizer_steps").get<std::size_t>());
    epoch_ = a.meta.at("epoch").get<std::size_t>();
    cache_.clear();
  }

 private:
  const Image& image(const std::string& id) const {
    auto it = images_.find(id);
    if (it == images_.end()) throw InputError("train_vqa: no image for id " + id);
    return it->second;
  }

  // Frozen encoders are evaluated once per image and cached.
  Tensor vision(const std::string& id) {
    if (!model_.config().freeze_vision) return model_.encode_image(image(id));
    return vision_eval(id);
  }

  Tensor vision_eval(const std::string& id) {
    auto it = cache_.find(id);
    if (it != cache_.end()) return it->second;
    NoGradGuard no_grad;
    Tensor v = model_.encode_image(image(id));
    if (model_.config().freeze_vision) cache_.emplace(id, v);
    return v;
  }

  VqaModel& model_;
  const Vocabulary& vocab_;
  const std::map<std::string, Image>& images_;
  std::vector<EncodedExample> train_, validation_;
  VqaTrainConfig cfg_;
  optim::AdamW optimizer_;
  optim::ScheduleConfig schedule_;
  std::optional<optim::GradientAccumulator> accumulator_;
  bool warmup_clamped_ = false;
  std::size_t epoch_ = 0;
  std::map<std::string, Tensor> cache_;
};

inline std::vector<EpochRecord> train_vqa(VqaModel& model, const Vocabulary& vocab,
                                          const std::map<std::string, Image>& images,
                                          const data::CorpusSplit& split, const VqaTrainConfig& cfg) {
  VqaTrainer trainer(model, vocab, images, split.train, split.validation, cfg);
  return trainer.train();
}

struct AblationRow {
  bool freeze_vision = true;
  std::vector<EpochRecord> epochs;
};

// Same data, seed and schedule with the vision encoder frozen and unfrozen.
inline std::vector<AblationRow> freeze_ablation(VqaConfig model_cfg, const Vocabulary& vocab,
                                                const std::map<std::string, Image>& images,
                                                const data::CorpusSplit& split,
                                                const VqaTrainConfig& cfg) {
  std::vector<AblationRow> rows;
  for (bool frozen : {true, false}) {
    model_cfg.freeze_vision = frozen;
    VqaModel model(model_cfg);
    rows.push_back({frozen, train_vqa(model, vocab, images, split, cfg)});
  }
  return rows;
}

}  // namespace peftlab::vqa
