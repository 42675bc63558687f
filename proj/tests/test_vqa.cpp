// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "peftlab/vqa.hpp"

namespace pl = peftlab;
namespace vqa = peftlab::vqa;
namespace data = peftlab::data;
using pl::Tensor;

namespace {

struct Fixture {
  data::Corpus corpus = data::generate_corpus(10, 0);
  data::Vocabulary vocab = data::Vocabulary::build(corpus.examples);
  std::map<std::string, pl::Image> images = vqa::image_index(corpus);

  vqa::VqaConfig config() const {
    vqa::VqaConfig c;
    c.vocab_size = vocab.size();
    c.d_model = 32;
    c.n_heads = 2;
    c.vision_layers = 1;
    c.encoder_layers = 1;
    c.decoder_layers = 1;
    return c;
  }
};

void set_linear(pl::Linear& l, const Tensor& w) {
  std::copy(w.data().begin(), w.data().end(), l.weight.tensor.mutable_data().begin());
  if (l.bias) std::fill(l.bias->tensor.mutable_data().begin(), l.bias->tensor.mutable_data().end(), 0.0);
}

// Plain-loop y = x W^T + b.
std::vector<double> affine(const pl::Linear& l, const std::vector<double>& x) {
  const auto w = l.weight.tensor.data();
  const std::size_t out = l.out_features(), in = l.in_features();
  std::vector<double> y(out, 0.0);
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t i = 0; i < in; ++i) y[o] += w[o * in + i] * x[i];
    if (l.bias) y[o] += l.bias->tensor.data()[o];
  }
  return y;
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  return {t.data().begin() + r * t.cols(), t.data().begin() + (r + 1) * t.cols()};
}

}  // namespace

TEST(VqaConfig, Validation) {
  vqa::VqaConfig c;
  c.vocab_size = 20;
  EXPECT_NO_THROW(c.validate());
  c.n_heads = 5;
  EXPECT_THROW(c.validate(), pl::ConfigError);
  c.n_heads = 4;
  c.patch_size = 5;
  EXPECT_THROW(c.validate(), pl::ConfigError);
}

TEST(CrossAttention, SingleKeyGivesProjectedValue) {
  pl::Rng rng = pl::derive_rng(1);
  pl::MultiHeadAttention attn("x", 4, 2, rng);
  const Tensor q = Tensor::randn({3, 4}, 1.0, rng);
  const Tensor kv = Tensor::randn({1, 4}, 1.0, rng);
  const Tensor out = vqa::cross_attention(attn, q, kv);
  const auto expected = affine(attn.output, affine(attn.value, row(kv, 0)));
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out.at(t, j), expected[j], 1e-12);
}

TEST(CrossAttention, ZeroQueryAveragesValues) {
  pl::Rng rng = pl::derive_rng(2);
  pl::MultiHeadAttention attn("x", 4, 2, rng);
  set_linear(attn.query, Tensor::zeros({4, 4}));
  const Tensor q = Tensor::randn({2, 4}, 1.0, rng);
  const Tensor kv = Tensor::randn({5, 4}, 1.0, rng);
  const Tensor out = vqa::cross_attention(attn, q, kv);
  std::vector<double> mean_v(4, 0.0);
  for (std::size_t n = 0; n < 5; ++n) {
    const auto v = affine(attn.value, row(kv, n));
    for (std::size_t j = 0; j < 4; ++j) mean_v[j] += v[j] / 5.0;
  }
  const auto expected = affine(attn.output, mean_v);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out.at(t, j), expected[j], 1e-12);
}

TEST(CrossAttention, HandCaseWithIdentityProjections) {
  pl::Rng rng = pl::derive_rng(3);
  pl::MultiHeadAttention attn("x", 2, 1, rng);
  for (auto* l : {&attn.query, &attn.key, &attn.value, &attn.output}) set_linear(*l, Tensor::identity(2));
  const Tensor q = Tensor::matrix({{1, 0}});
  const Tensor kv = Tensor::matrix({{1, 0}, {0, 1}});
  // Values equal keys here; scores are [1, 0] / sqrt(2).
  const double e = std::exp(1.0 / std::sqrt(2.0));
  const double w0 = e / (e + 1.0), w1 = 1.0 / (e + 1.0);
  const Tensor out = vqa::cross_attention(attn, q, kv);
  EXPECT_NEAR(out.at(0, 0), w0, 1e-14);
  EXPECT_NEAR(out.at(0, 1), w1, 1e-14);
}

TEST(CrossAttention, WidthMismatchAndWeightsNormalized) {
  pl::Rng rng = pl::derive_rng(4);
  pl::MultiHeadAttention attn("x", 4, 2, rng);
  EXPECT_THROW(attn(Tensor::zeros({2, 4}), Tensor::zeros({3, 5})), pl::DimensionError);
  const auto res = attn.forward(Tensor::randn({3, 4}, 1.0, rng), Tensor::randn({6, 4}, 1.0, rng), nullptr, true);
  ASSERT_EQ(res.weights.size(), 2u);
  for (const auto& w : res.weights)
    for (std::size_t t = 0; t < w.rows(); ++t) {
      double s = 0;
      for (std::size_t n = 0; n < w.cols(); ++n) s += w.at(t, n);
      EXPECT_NEAR(s, 1.0, 1e-10);
    }
}

TEST(VqaModel, VisionFrozenByDefault) {
  Fixture f;
  vqa::VqaModel model(f.config());
  for (auto* p : model.vision_parameters()) EXPECT_TRUE(p->frozen) << p->name;
  for (auto* p : model.text_parameters()) EXPECT_FALSE(p->frozen) << p->name;
  auto cfg = f.config();
  cfg.freeze_vision = false;
  vqa::VqaModel open(cfg);
  for (auto* p : open.vision_parameters()) EXPECT_FALSE(p->frozen) << p->name;
}

TEST(VqaModel, UntrainedLossNearLogVocab) {
  Fixture f;
  vqa::VqaModel model(f.config());
  double total = 0;
  std::size_t n = 0;
  for (const auto& ex : f.corpus.examples) {
    const auto q = f.vocab.encode_words(ex.question);
    const auto a = vqa::answer_tokens(f.vocab, ex.answer);
    const double l = vqa::vqa_loss(model, f.images.at(ex.image_id), q, a).item();
    EXPECT_EQ(l, vqa::vqa_loss(model, f.images.at(ex.image_id), q, a).item());
    total += l;
    ++n;
  }
  const double ln_v = std::log(static_cast<double>(f.vocab.size()));
  EXPECT_NEAR(total / n, ln_v, 0.15 * ln_v);
}

TEST(VqaModel, InputContracts) {
  Fixture f;
  vqa::VqaModel model(f.config());
  const auto& ex = f.corpus.examples[0];
  const auto& im = f.images.at(ex.image_id);
  auto q = f.vocab.encode_words(ex.question);
  const auto a = vqa::answer_tokens(f.vocab, ex.answer);
  std::vector<data::TokenId> no_prefix(q.begin() + 1, q.end());
  EXPECT_THROW(vqa::vqa_loss(model, im, no_prefix, a), pl::ContractError);
  EXPECT_THROW(vqa::vqa_loss(model, im, q, std::vector<data::TokenId>{}), pl::InputError);
  EXPECT_THROW(vqa::vqa_loss(model, im, q, std::vector<data::TokenId>{a[0]}), pl::ContractError);
  EXPECT_THROW(model.encode_image(pl::Image::blank(16, 16)), pl::DimensionError);
}

TEST(VqaModel, DecoderIsCausal) {
  Fixture f;
  vqa::VqaModel model(f.config());
  const auto& ex = f.corpus.examples[0];
  const Tensor vision = model.encode_image(f.images.at(ex.image_id));
  const Tensor memory = model.encode_question(vision, f.vocab.encode_words(ex.question));
  const std::vector<data::TokenId> base{data::Vocabulary::kBos, 5, 6, 7, 8, 9};
  const Tensor ref = model.decode(memory, base);
  for (std::size_t t = 1; t < base.size(); ++t) {
    auto changed = base;
    changed[t] = 10;
    const Tensor out = model.decode(memory, changed);
    const std::size_t v = out.cols();
    for (std::size_t i = 0; i < t * v; ++i) ASSERT_EQ(out.data()[i], ref.data()[i]) << "position " << i / v;
    bool differs = false;
    for (std::size_t i = t * v; i < (t + 1) * v; ++i) differs |= out.data()[i] != ref.data()[i];
    EXPECT_TRUE(differs) << t;
  }
}

TEST(VqaModel, GenerationDeterministicAndCapped) {
  Fixture f;
  auto cfg = f.config();
  vqa::VqaModel model(cfg);
  const auto& ex = f.corpus.examples[1];
  const auto q = f.vocab.encode_words(ex.question);
  const auto a = vqa::generate_answer(model, f.images.at(ex.image_id), q);
  EXPECT_EQ(a, vqa::generate_answer(model, f.images.at(ex.image_id), q));
  EXPECT_LE(a.size(), cfg.max_answer_len);
  cfg.max_answer_len = 1;
  vqa::VqaModel one(cfg);
  EXPECT_EQ(vqa::generate_answer(one, f.images.at(ex.image_id), q).size(), 1u);
}

// Overfits one example; also checks that shuffling the image patches changes
// the trained model's output on a counting question.
TEST(VqaModel, SingleExampleOverfit) {
  Fixture f;
  vqa::VqaModel model(f.config());
  const data::VqaExample* ex = nullptr;
  for (const auto& e : f.corpus.examples)
    if (e.category == data::Category::kCount && f.corpus.image(e.image_id).polyp_count == 2) ex = &e;
  ASSERT_NE(ex, nullptr);
  const auto& im = f.images.at(ex->image_id);
  const auto q = f.vocab.encode_words(ex->question);
  const auto a = vqa::answer_tokens(f.vocab, ex->answer);
  pl::optim::AdamWConfig ac;
  ac.learning_rate = 1e-3;
  pl::optim::AdamW opt(model.parameters(), ac);
  const auto vision_sum = pl::checksum(model.vision_parameters());
  double loss = 0;
  for (int step = 0; step < 200; ++step) {
    const Tensor l = vqa::vqa_loss(model, im, q, a);
    loss = l.item();
    pl::backward(l);
    opt.step(ac.learning_rate);
    opt.zero_grad();
  }
  EXPECT_LT(loss, 0.05);
  EXPECT_EQ(vqa::generate_answer(model, im, q), a);
  EXPECT_EQ(pl::checksum(model.vision_parameters()), vision_sum);

  const Tensor patches = model.patchify(im);
  std::vector<double> shuffled(patches.data().begin(), patches.data().end());
  const std::size_t n = patches.rows(), d = patches.cols();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), pl::derive_rng(9));
  for (std::size_t i = 0; i < n; ++i)
    std::copy_n(patches.data().begin() + perm[i] * d, d, shuffled.begin() + i * d);
  const Tensor v_ref = model.encode_patches(patches);
  const Tensor v_perm = model.encode_patches(Tensor({n, d}, shuffled));
  const Tensor l_ref = model.answer_logits(v_ref, q, a), l_perm = model.answer_logits(v_perm, q, a);
  double diff = 0;
  for (std::size_t i = 0; i < l_ref.size(); ++i) diff = std::max(diff, std::abs(l_ref.data()[i] - l_perm.data()[i]));
  EXPECT_GT(diff, 1e-6);
}

TEST(VqaTrainer, TrainsOnlyLanguageSideAndReports) {
  Fixture f;
  vqa::VqaModel model(f.config());
  const auto split = data::split_80_20(f.corpus.examples, 0);
  vqa::VqaTrainConfig tc;
  tc.adamw.learning_rate = 1e-3;
  tc.batch_size = 2;
  tc.accumulation_steps = 1;
  tc.epochs = 3;
  tc.warmup_steps = 200;
  const auto vision_sum = pl::checksum(model.vision_parameters());
  const auto text_sum = pl::checksum(model.text_parameters());
  vqa::VqaTrainer trainer(model, f.vocab, f.images, split.train, split.validation, tc);
  EXPECT_TRUE(trainer.warmup_clamped());
  EXPECT_LT(trainer.schedule().warmup_steps, trainer.schedule().total_steps);
  const auto records = trainer.train();
  ASSERT_EQ(records.size(), 3u);
  EXPECT_LT(records.back().train_loss, records.front().train_loss);
  for (const auto& r : records) {
    for (double v : {r.validation.bleu, r.validation.rouge1, r.validation.rougeL, r.validation.meteor}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_EQ(pl::checksum(model.vision_parameters()), vision_sum);
  EXPECT_NE(pl::checksum(model.text_parameters()), text_sum);
  EXPECT_THROW(trainer.run_epoch(), pl::ContractError);
  EXPECT_THROW(vqa::VqaTrainer(model, f.vocab, f.images, {}, split.validation, tc), pl::InputError);
}

TEST(VqaTrainer, CheckpointResumeIsExact) {
  Fixture f;
  const auto split = data::split_80_20(f.corpus.examples, 0);
  vqa::VqaTrainConfig tc;
  tc.adamw.learning_rate = 1e-3;
  tc.batch_size = 2;
  tc.accumulation_steps = 2;
  tc.epochs = 3;
  tc.warmup_steps = 2;

  vqa::VqaModel straight(f.config());
  vqa::VqaTrainer a(straight, f.vocab, f.images, split.train, split.validation, tc);
  const auto full = a.train();

  const auto stem = std::filesystem::temp_directory_path() / "peftlab_vqa_ckpt" / "model";
  vqa::VqaModel first(f.config());
  {
    vqa::VqaTrainer b(first, f.vocab, f.images, split.train, split.validation, tc);
    b.run_epoch();
    b.run_epoch();
    b.save_checkpoint(stem);
  }
  vqa::VqaModel resumed(f.config());
  vqa::VqaTrainer c(resumed, f.vocab, f.images, split.train, split.validation, tc);
  c.load_checkpoint(stem);
  EXPECT_EQ(c.epochs_done(), 2u);
  const auto last = c.run_epoch();
  EXPECT_EQ(pl::checksum(resumed.parameters()), pl::checksum(straight.parameters()));
  EXPECT_EQ(last.train_loss, full.back().train_loss);
  EXPECT_EQ(last.validation.rougeL, full.back().validation.rougeL);
}

TEST(VqaModel, LoraModeTrainsOnlyAdapters) {
  Fixture f;
  auto cfg = f.config();
  cfg.lora_rank = 2;
  vqa::VqaModel model(cfg);
  std::vector<pl::Linear*> adapted;
  for (auto* attn : model.language_attention())
    for (auto& [_, l] : attn->projections()) adapted.push_back(l);
  EXPECT_EQ(pl::count_trainable(model.parameters()), pl::lora::expected_trainable(adapted));
  EXPECT_EQ(pl::count_trainable(model.parameters()), adapted.size() * 2 * (32 + 32));
}

TEST(VqaModel, VisionWarmupThenFrozen) {
  Fixture f;
  vqa::VqaModel model(f.config());
  std::vector<pl::Image> imgs;
  std::vector<int> counts;
  for (const auto& im : f.corpus.images) {
    imgs.push_back(im.pixels);
    counts.push_back(im.polyp_count);
  }
  const auto before = pl::checksum(model.vision_parameters());
  const double loss = vqa::warmup_vision(model, imgs, counts, 2, 1e-3, 0);
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_NE(pl::checksum(model.vision_parameters()), before);
  for (auto* p : model.vision_parameters()) EXPECT_TRUE(p->frozen);
}

TEST(VqaAblation, BothModesReport) {
  Fixture f;
  const auto split = data::split_80_20(f.corpus.examples, 0);
  vqa::VqaTrainConfig tc;
  tc.adamw.learning_rate = 1e-3;
  tc.accumulation_steps = 1;
  tc.epochs = 1;
  tc.warmup_steps = 0;
  const auto rows = vqa::freeze_ablation(f.config(), f.vocab, f.images, split, tc);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_TRUE(rows[0].freeze_vision);
  EXPECT_FALSE(rows[1].freeze_vision);
  for (const auto& r : rows) EXPECT_EQ(r.epochs.size(), 1u);
}
