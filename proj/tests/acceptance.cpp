// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. Values are checked against oracles that
// live here, not against the library's own helpers.
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "op_cases.hpp"
#include "peftlab/cli.hpp"
#include "peftlab/dataset.hpp"
#include "peftlab/diffusion.hpp"
#include "peftlab/lora.hpp"
#include "peftlab/metrics.hpp"
#include "peftlab/optim.hpp"
#include "peftlab/vqa.hpp"

namespace pl = peftlab;
namespace fs = std::filesystem;
using pl::Tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  std::string table;  // printed indented under the verdict line
};

// Collects failures; a criterion passes only if no check failed.
class Checks {
 public:
  void require(bool ok, const std::string& what) {
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    if (!ok) ++failed_;
  }
  void note(const std::string& s) { notes_ += (notes_.empty() ? "" : "; ") + s; }
  Outcome outcome() const {
    Outcome o{failed_ == 0, notes_, {}};
    for (const auto& f : failures_) o.detail += (o.detail.empty() ? "" : "; ") + ("failed: " + f);
    if (failed_ > failures_.size()) o.detail += "; +" + std::to_string(failed_ - failures_.size()) + " more";
    return o;
  }

 private:
  std::vector<std::string> failures_;
  std::size_t failed_ = 0;
  std::string notes_;
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// Non-increases allowed at most `plateaus` times and the last value below the first.
bool decreasing_with_plateaus(const std::vector<double>& v, std::size_t plateaus) {
  std::size_t flat = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (!(v[i] < v[i - 1])) ++flat;
  return flat <= plateaus && v.back() < v.front();
}

std::string series(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : " ") + fmt(x, 3);
  return s;
}

pl::metrics::Words words(std::string_view s) { return pl::text::normalize_words(s); }

// --- 1 ------------------------------------------------------------------------------

Outcome gradient_correctness() {
  Checks c;
  std::size_t cases = 0;
  double worst = 0.0;
  std::set<std::string> ops;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (auto& op : pl::testing::make_op_cases(1000 + seed)) {
      const auto r = pl::testing::grad_check(op.f, op.inputs, 1e-5);
      worst = std::max(worst, r.worst_relative_error);
      c.require(r.worst_relative_error < 1e-4, op.name + " seed " + std::to_string(seed) + " rel err " +
                                                   fmt(r.worst_relative_error));
      ops.insert(op.name);
      ++cases;
    }
  }
  c.note(std::to_string(ops.size()) + " ops x 20 random cases = " + std::to_string(cases) + " checks, worst rel err " +
         fmt(worst, 3));
  return c.outcome();
}

// --- 2 ------------------------------------------------------------------------------

Outcome lora_identity() {
  Checks c;
  std::size_t layers = 0;
  // Diffusion denoiser with adapters on every projection of every block.
  pl::diffusion::DiffusionConfig dc;
  dc.blocks = 2;
  pl::diffusion::NoisePredictor model(dc);
  pl::Rng rng(11);
  const Tensor x = Tensor::randn({dc.tokens(), 3}, 1.0, rng);
  const Tensor cond = Tensor::randn({dc.cond_dim}, 1.0, rng);
  const auto before = model.predict(x, 7, cond).values();
  auto cfg = pl::lora::config_for_rank(4);
  cfg.target_projections = {"query", "key", "value", "output", "ff_in", "ff_out"};
  pl::diffusion::inject_lora(model, cfg, 3);
  c.require(bit_equal(before, model.predict(x, 7, cond).data()), "denoiser output changed by injection");
  for (auto& block : model.block_projections()) {
    for (auto& [name, layer] : block) {
      c.require(layer->adapter.has_value(), name + " has no adapter");
      const Tensor in = Tensor::randn({5, layer->in_features()}, 1.0, rng);
      c.require(bit_equal((*layer)(in).data(), layer->base_forward(in).data()), name + " differs from W0 path");
      ++layers;
    }
  }
  // VQA language side: adapted and plain models share base weights by seed.
  auto corpus = pl::data::generate_corpus(6, 0);
  const auto vocab = pl::data::Vocabulary::build(corpus.examples);
  pl::vqa::VqaConfig vc;
  vc.d_model = 32;
  vc.vocab_size = vocab.size();
  pl::vqa::VqaModel plain(vc);
  vc.lora_rank = 4;
  pl::vqa::VqaModel adapted(vc);
  std::size_t attn = 0;
  for (auto* a : adapted.language_attention())
    for (auto& [name, layer] : a->projections()) {
      c.require(layer->adapter.has_value(), "vqa " + name + " has no adapter");
      ++attn;
    }
  for (const auto& ex : corpus.examples) {
    const auto& img = corpus.image(ex.image_id).pixels;
    const auto q = vocab.encode_words(ex.question);
    const auto a = pl::vqa::answer_tokens(vocab, ex.answer);
    const auto l1 = plain.answer_logits(plain.encode_image(img), q, a);
    const auto l2 = adapted.answer_logits(adapted.encode_image(img), q, a);
    c.require(bit_equal(l1.data(), l2.data()), "vqa logits differ for " + ex.image_id);
  }
  c.note(std::to_string(layers) + " denoiser projections and " + std::to_string(attn) +
         " VQA attention projections bit-identical to the base path; " + std::to_string(corpus.examples.size()) +
         " VQA logit sets bit-identical");
  return c.outcome();
}

// --- 3 ------------------------------------------------------------------------------

Outcome lora_merge() {
  Checks c;
  pl::Rng rng(21);
  pl::MultiHeadAttention attn("attn", 24, 4, rng);
  pl::lora::inject(attn.projections(), pl::lora::config_for_rank(4), rng);
  auto compare = [&](const std::string& when) {
    double worst = 0.0;
    for (auto& [name, layer] : attn.projections()) {
      const pl::Linear merged = pl::lora::merged_copy(*layer);
      for (int i = 0; i < 8; ++i) {
        const Tensor in = Tensor::randn({3, 24}, 1.0, rng);
        worst = std::max(worst, max_abs_diff((*layer)(in).data(), merged(in).data()));
      }
    }
    c.require(worst <= 1e-10, when + " max diff " + fmt(worst));
    return worst;
  };
  const double at_init = compare("init");
  const Tensor x = Tensor::randn({6, 24}, 1.0, rng), target = Tensor::randn({6, 24}, 1.0, rng);
  pl::optim::AdamW opt(attn.parameters(), {.learning_rate = 1e-2});
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 100; ++step) {
    Tensor loss = pl::mean(pl::square(pl::sub(attn(x, x), target)));
    (step == 0 ? first : last) = loss.item();
    pl::backward(loss);
    opt.step(1e-2);
    opt.zero_grad();
  }
  c.require(last < first, "adapters did not train");
  for (auto& [name, layer] : attn.projections()) {
    bool moved = false;
    for (double v : layer->adapter->b.tensor.data()) moved = moved || v != 0.0;
    c.require(moved, name + " B still zero after training");
  }
  const double trained = compare("after 100 steps");
  c.note("max |merged - adapted| " + fmt(at_init, 3) + " at init, " + fmt(trained, 3) + " after 100 steps (loss " +
         fmt(first) + " -> " + fmt(last) + ")");
  return c.outcome();
}

// --- 4 ------------------------------------------------------------------------------

Outcome parameter_accounting() {
  Checks c;
  // Oracle: r * (rows + cols) of every adapted W0, read off the weight shape.
  auto oracle = [](const std::vector<pl::Linear*>& layers) {
    std::size_t total = 0;
    for (auto* l : layers) {
      const auto& s = l->weight.tensor.shape();
      if (l->adapter) total += l->adapter->rank * (s[0] + s[1]);
    }
    return total;
  };
  pl::diffusion::NoisePredictor model(pl::diffusion::DiffusionConfig{});
  pl::diffusion::inject_lora(model, pl::lora::config_for_rank(4), 0);
  const auto counted = pl::count_trainable(model.parameters());
  const auto expected = oracle(model.adapted_layers());
  c.require(counted == expected, "denoiser " + std::to_string(counted) + " vs " + std::to_string(expected));

  auto corpus = pl::data::generate_corpus(6, 0);
  pl::vqa::VqaConfig vc;
  vc.vocab_size = pl::data::Vocabulary::build(corpus.examples).size();
  vc.lora_rank = 8;
  pl::vqa::VqaModel vqa(vc);
  std::vector<pl::Linear*> vqa_layers;
  for (auto* a : vqa.language_attention())
    for (auto& [_, l] : a->projections()) vqa_layers.push_back(l);
  const auto vqa_counted = pl::count_trainable(vqa.parameters());
  const auto vqa_expected = oracle(vqa_layers);
  c.require(vqa_counted == vqa_expected, "vqa " + std::to_string(vqa_counted) + " vs " + std::to_string(vqa_expected));

  const double reduction = 1.0 - 4.0 * (768.0 + 768.0) / (768.0 * 768.0);
  const auto pc = pl::lora::param_count(768, 768, 4);
  c.require(pc.full == 768u * 768u && pc.lora == 4u * 1536u, "param_count(768, 768, 4) sizes");
  c.require(std::abs(pc.reduction_fraction - reduction) < 1e-15, "param_count reduction fraction");
  c.require(reduction >= 0.899, "reduction below 0.899");
  c.note("denoiser " + std::to_string(counted) + " = sum r(d+k); VQA rank 8 " + std::to_string(vqa_counted) +
         " = sum r(d+k); d=k=768 r=4 reduction " + fmt(reduction, 6));
  return c.outcome();
}

// --- 5 ------------------------------------------------------------------------------

Outcome freeze_contracts() {
  Checks c;
  const auto corpus = pl::data::generate_corpus(12, 5);
  const auto vocab = pl::data::Vocabulary::build(corpus.examples);
  const auto split = pl::data::split_80_20(corpus.examples, 5);
  const auto images = pl::vqa::image_index(corpus);
  pl::vqa::VqaConfig vc;
  vc.vocab_size = vocab.size();
  pl::vqa::VqaModel model(vc);
  const auto vision_before = pl::checksum(model.vision_parameters());
  const auto language_before = pl::checksum(model.text_parameters());
  pl::vqa::VqaTrainConfig tc;
  tc.adamw.learning_rate = 1e-3;
  tc.accumulation_steps = 1;
  tc.epochs = 3;
  pl::vqa::train_vqa(model, vocab, images, split, tc);
  c.require(pl::checksum(model.vision_parameters()) == vision_before, "vision encoder changed");
  c.require(pl::checksum(model.text_parameters()) != language_before, "text encoder did not train");

  std::vector<pl::Image> imgs;
  for (const auto& im : corpus.images) imgs.push_back(im.pixels);
  pl::diffusion::NoisePredictor dm(pl::diffusion::DiffusionConfig{});
  pl::diffusion::inject_lora(dm, pl::lora::config_for_rank(4), 0);
  const auto base_before = pl::checksum(dm.base_parameters());
  const auto lora_before = pl::checksum(dm.lora_parameters());
  pl::diffusion::DiffusionTrainConfig dtc;
  dtc.adamw.learning_rate = 3e-3;
  dtc.batch_size = 2;
  dtc.accumulation_steps = 1;
  dtc.epochs = 2;
  dtc.eval_samples = 2;
  pl::diffusion::train_diffusion(dm, imgs, pl::data::build_prompts(corpus.images), dtc);
  c.require(pl::checksum(dm.base_parameters()) == base_before, "diffusion base changed");
  c.require(pl::checksum(dm.lora_parameters()) != lora_before, "adapters did not train");
  c.note("vision checksum stable over 3 VQA epochs; denoiser base checksum stable over 2 adapter epochs");
  return c.outcome();
}

// --- 6 ------------------------------------------------------------------------------

Tensor regression_loss(const pl::Parameter& w, const std::vector<std::pair<Tensor, double>>& batch) {
  Tensor total = Tensor::scalar(0.0);
  for (const auto& [x, y] : batch) total = pl::add(total, pl::square(pl::sub(pl::sum(pl::mul(w.tensor, x)), Tensor::scalar(y))));
  return pl::scale(total, 1.0 / static_cast<double>(batch.size()));
}

std::vector<double> accumulate_run(std::size_t micro, std::size_t per_micro) {
  pl::Rng rng(61);
  pl::Parameter w("w", Tensor::randn({5}, 1.0, rng));
  std::vector<std::pair<Tensor, double>> data;
  for (int i = 0; i < 16 * 3; ++i) data.emplace_back(Tensor::randn({5}, 1.0, rng), std::normal_distribution<>(0, 1)(rng));
  pl::optim::AdamW opt({&w}, {.learning_rate = 0.05});
  pl::optim::GradientAccumulator acc(opt, {.peak_lr = 0.05, .warmup_steps = 1, .total_steps = 10}, micro);
  std::size_t at = 0;
  for (int window = 0; window < 3; ++window)
    for (std::size_t m = 0; m < micro; ++m, at += per_micro)
      acc.micro_step(regression_loss(w, {data.begin() + at, data.begin() + at + per_micro}));
  return w.tensor.values();
}

Outcome optimizer() {
  Checks c;
  pl::Parameter p("p", Tensor({1}, {3.0}));
  pl::optim::AdamW opt({&p}, {.learning_rate = 0.1, .weight_decay = 0.0});
  p.tensor.mutable_grad()[0] = 1.0;
  opt.step(0.1);
  const double delta = p.tensor.data()[0] - 3.0;
  c.require(std::abs(delta + 0.1) < 1e-6, "first step " + fmt(delta, 10));

  const auto a = accumulate_run(8, 2), b = accumulate_run(1, 16);
  const double diff = max_abs_diff(a, b);
  c.require(diff <= 1e-10, "accumulation diff " + fmt(diff));

  const pl::optim::ScheduleConfig s{.peak_lr = 2e-5, .warmup_steps = 200, .total_steps = 1000, .min_lr = 1e-6};
  auto formula = [&](std::size_t t) {
    if (t < s.warmup_steps) return s.peak_lr * double(t) / double(s.warmup_steps);
    const double prog = double(t - s.warmup_steps) / double(s.total_steps - s.warmup_steps);
    return s.min_lr + 0.5 * (s.peak_lr - s.min_lr) * (1.0 + std::cos(std::numbers::pi * prog));
  };
  c.require(pl::optim::cosine_lr(0, s) == 0.0, "lr(0) != 0");
  c.require(pl::optim::cosine_lr(100, s) == 1e-5, "lr(100) != peak / 2");
  c.require(pl::optim::cosine_lr(200, s) == 2e-5, "lr(warmup) != peak");
  c.require(std::abs(pl::optim::cosine_lr(600, s) - (2e-5 + 1e-6) / 2) <= 1e-20, "lr(midpoint)");
  c.require(std::abs(pl::optim::cosine_lr(1000, s) - 1e-6) <= 1e-20, "lr(total) != min_lr");
  double worst = 0.0;
  for (std::size_t t = 0; t <= s.total_steps; ++t) worst = std::max(worst, std::abs(pl::optim::cosine_lr(t, s) - formula(t)));
  c.require(worst <= 1e-20, "schedule vs formula " + fmt(worst));
  c.note("first step " + fmt(delta, 10) + "; 8x2 vs 1x16 diff " + fmt(diff, 3) + "; schedule max dev " + fmt(worst, 3));
  return c.outcome();
}

// --- 7 ------------------------------------------------------------------------------

Outcome metric_oracles() {
  Checks c;
  namespace m = pl::metrics;
  auto near = [&](double got, double want, const std::string& what) {
    c.require(std::abs(got - want) <= 1e-12, what + " = " + fmt(got, 17) + ", want " + fmt(want, 17));
  };
  std::size_t n = 0;
  auto hand = [&](double got, double want, const std::string& what) {
    near(got, want, what);
    ++n;
  };
  hand(m::bleu(words("a b c"), words("a b c d")), std::exp(-1.0 / 3.0), "bleu(a b c | a b c d)");
  hand(m::bleu(words("a b c d"), words("a b c d")), 1.0, "bleu identity");
  hand(m::bleu(words("x y z"), words("a b c")), 0.0, "bleu disjoint");
  hand(m::rouge_1(words("polyp in central region"), words("polyp in central region")), 1.0, "rouge1 identity");
  hand(m::rouge_1(words("a b"), words("c d")), 0.0, "rouge1 disjoint");
  hand(m::rouge_1(words("1"), words("1")), 1.0, "rouge1(1 | 1)");
  hand(m::rouge_l(words("polyp in central region"), words("polyp located in central region")), 8.0 / 9.0,
       "rougeL LCS 4");
  hand(m::rouge_l(words("c b a"), words("a b c")), 1.0 / 3.0, "rougeL reversal");
  hand(m::rouge_l(words("a b c"), words("a b c")), 1.0, "rougeL identity");
  hand(m::rouge_l(words("a b"), words("c d")), 0.0, "rougeL disjoint");
  hand(m::meteor(words("b a"), words("a b")), 0.5, "meteor(b a | a b)");
  hand(m::meteor(words("x y"), words("a b")), 0.0, "meteor disjoint");
  for (std::size_t len = 1; len <= 8; ++len) {
    std::vector<std::string> s;
    for (std::size_t i = 0; i < len; ++i) s.push_back("w" + std::to_string(i));
    hand(m::meteor(s, s), 1.0 - 0.5 / double(len * len * len), "meteor identity n=" + std::to_string(len));
  }
  const auto ref = words("a b");
  c.require(m::bleu({}, ref) == 0.0 && m::rouge_1({}, ref) == 0.0 && m::rouge_l({}, ref) == 0.0 &&
                m::meteor({}, ref) == 0.0,
            "empty candidate not 0");
  c.note(std::to_string(n) + " closed-form cases within 1e-12, empty candidates score 0");
  return c.outcome();
}

// --- 8 ------------------------------------------------------------------------------

Tensor random_psd(std::size_t n, std::size_t rank, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<double> a(n * rank), s(n * n, 0.0);
  for (auto& v : a) v = g(rng);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < rank; ++k) s[i * n + j] += a[i * rank + k] * a[j * rank + k];
  return Tensor({n, n}, std::move(s));
}

Outcome frechet() {
  Checks c;
  namespace m = pl::metrics;
  const auto eye = Tensor::identity(5);
  const double zero = m::frechet_distance({1, 2, 3, 4, 5}, eye, {1, 2, 3, 4, 5}, eye);
  const double nine = m::frechet_distance({0, 0, 0, 0, 0}, eye, {3, 0, 0, 0, 0}, eye);
  const double two = m::frechet_distance({0.5, -1}, Tensor::matrix({{1, 0}, {0, 4}}), {0.5, -1},
                                         Tensor::matrix({{4, 0}, {0, 1}}));
  c.require(std::abs(zero) <= 1e-8, "identical Gaussians " + fmt(zero));
  c.require(std::abs(nine - 9.0) <= 1e-8, "mean shift 3 gave " + fmt(nine, 12));
  c.require(std::abs(two - 2.0) <= 1e-8, "diagonal case gave " + fmt(two, 12));
  std::mt19937_64 rng(81);
  std::normal_distribution<double> g;
  double worst_asym = 0.0, min_value = 1e300;
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 2 + i % 7;
    const auto s1 = random_psd(n, 1 + i % n, rng), s2 = random_psd(n, n, rng);
    std::vector<double> m1(n), m2(n);
    for (auto& v : m1) v = g(rng);
    for (auto& v : m2) v = g(rng);
    const double ab = m::frechet_distance(m1, s1, m2, s2), ba = m::frechet_distance(m2, s2, m1, s1);
    worst_asym = std::max(worst_asym, std::abs(ab - ba) / std::max(1.0, ab));
    min_value = std::min({min_value, ab, ba});
    c.require(ab >= 0.0 && ba >= 0.0, "negative distance at pair " + std::to_string(i));
    c.require(std::abs(ab - ba) <= 1e-8 * std::max(1.0, ab), "asymmetric at pair " + std::to_string(i));
  }
  c.note("analytic 0 / 9 / 2 reproduced; 100 PSD pairs: max rel asymmetry " + fmt(worst_asym, 3) + ", min value " +
         fmt(min_value, 3));
  return c.outcome();
}

// --- 9 ------------------------------------------------------------------------------

Outcome fbd_separation() {
  Checks c;
  std::vector<pl::Image> real;
  for (auto& im : pl::data::generate_corpus(64, 9).images) real.push_back(std::move(im.pixels));
  std::mt19937_64 rng(91);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<pl::Image> noise;
  for (int i = 0; i < 64; ++i) {
    auto im = pl::Image::blank(32, 32);
    for (auto& v : im.pixels) v = u(rng);
    noise.push_back(std::move(im));
  }
  const pl::metrics::FeatureExtractor fx(0);
  const std::vector<pl::Image> a(real.begin(), real.begin() + 32), b(real.begin() + 32, real.end());
  const double within = pl::metrics::fbd(a, b, fx);
  const double across = pl::metrics::fbd(real, noise, fx);
  c.require(across > 3.0 * within, "noise " + fmt(across) + " vs halves " + fmt(within));
  c.note("fbd(real, noise) " + fmt(across) + " vs fbd(half, half) " + fmt(within) + ", ratio " + fmt(across / within));
  return c.outcome();
}

// --- 10 -----------------------------------------------------------------------------

// Seed-0 corpus cut to its first 50 questions.
struct FiftyExamples {
  pl::data::Corpus corpus = pl::data::generate_corpus(20, 0);
  std::vector<pl::data::VqaExample> examples{corpus.examples.begin(), corpus.examples.begin() + 50};
  pl::data::Vocabulary vocab = pl::data::Vocabulary::build(examples);
  std::map<std::string, pl::Image> images = pl::vqa::image_index(corpus);
};

pl::vqa::VqaTrainConfig desk_vqa_training(std::size_t epochs) {
  pl::vqa::VqaTrainConfig tc;
  tc.adamw.learning_rate = 1e-3;
  tc.warmup_steps = 20;
  tc.batch_size = 2;
  tc.accumulation_steps = 1;
  tc.epochs = epochs;
  return tc;
}

Outcome vqa_learning() {
  Checks c;
  const FiftyExamples d;
  c.require(d.examples.size() == 50, "corpus has fewer than 50 questions");
  pl::vqa::VqaConfig vc;
  vc.vocab_size = d.vocab.size();
  {
    pl::vqa::VqaModel model(vc);
    pl::vqa::VqaTrainer trainer(model, d.vocab, d.images, d.examples, {}, desk_vqa_training(3));
    std::vector<double> losses{trainer.mean_loss(trainer.train_examples())};
    for (int e = 0; e < 3; ++e) {
      trainer.run_epoch();
      losses.push_back(trainer.mean_loss(trainer.train_examples()));
    }
    c.require(decreasing_with_plateaus(losses, 1), "loss over 3 epochs: " + series(losses));
    c.note("50-example loss before/after epochs 1-3: " + series(losses));
  }
  const auto split = pl::data::split_80_20(d.examples, 0);
  pl::vqa::VqaModel model(vc);
  pl::vqa::VqaTrainer trainer(model, d.vocab, d.images, split.train, split.validation, desk_vqa_training(200));
  double rouge_l = 0.0;
  std::size_t epoch = 0;
  while (epoch < 200 && rouge_l < 0.90) {
    trainer.run_epoch();
    ++epoch;
    if (epoch % 5 == 0) rouge_l = trainer.evaluate_train().rougeL;
  }
  c.require(rouge_l >= 0.90, "train ROUGE-L " + fmt(rouge_l) + " after " + std::to_string(epoch) + " epochs");
  c.note("memorization: train ROUGE-L " + fmt(rouge_l) + " on " + std::to_string(split.train.size()) +
         " examples after " + std::to_string(epoch) + " epochs");
  return c.outcome();
}

// --- 11 -----------------------------------------------------------------------------

Outcome ablation() {
  Checks c;
  const FiftyExamples d;
  const auto split = pl::data::split_80_20(d.examples, 0);
  pl::vqa::VqaConfig vc;
  vc.vocab_size = d.vocab.size();
  const std::size_t epochs = 5;
  const auto rows = pl::vqa::freeze_ablation(vc, d.vocab, d.images, split, desk_vqa_training(epochs));
  c.require(rows.size() == 2 && rows[0].freeze_vision && !rows[1].freeze_vision, "both modes present");
  std::ostringstream table;
  table << "vision     epoch  train_loss  bleu    rouge1  rougeL  meteor\n";
  for (const auto& r : rows) {
    c.require(r.epochs.size() == epochs, "missing epochs");
    for (const auto& e : r.epochs) {
      const auto& v = e.validation;
      for (double x : {v.bleu, v.rouge1, v.rougeL, v.meteor}) c.require(x >= 0.0 && x <= 1.0, "metric out of range");
      c.require(std::isfinite(e.train_loss), "non-finite loss");
      char line[160];
      std::snprintf(line, sizeof line, "%-9s  %5zu  %10.4f  %.4f  %.4f  %.4f  %.4f\n",
                    r.freeze_vision ? "frozen" : "trainable", e.epoch, e.train_loss, v.bleu, v.rouge1, v.rougeL,
                    v.meteor);
      table << line;
    }
  }
  const auto& f = rows[0].epochs.back().validation;
  const auto& u = rows[1].epochs.back().validation;
  c.note("validation ROUGE-L frozen " + fmt(f.rougeL) + " vs trainable " + fmt(u.rougeL) + " after " +
         std::to_string(epochs) + " epochs (direction not asserted)");
  auto o = c.outcome();
  o.table = table.str();
  return o;
}

// --- 12 -----------------------------------------------------------------------------

Outcome diffusion_learning() {
  Checks c;
  const auto corpus = pl::data::generate_corpus(32, 0);
  std::vector<pl::Image> imgs;
  for (const auto& im : corpus.images) imgs.push_back(im.pixels);
  pl::diffusion::NoisePredictor model(pl::diffusion::DiffusionConfig{});
  pl::diffusion::inject_lora(model, pl::lora::config_for_rank(4), 0);
  pl::diffusion::DiffusionTrainConfig tc;
  tc.adamw.learning_rate = 3e-3;
  tc.warmup_steps = 2;
  tc.batch_size = 1;
  tc.accumulation_steps = 1;
  tc.epochs = 5;
  tc.eval_samples = 16;
  pl::diffusion::DiffusionTrainer trainer(model, imgs, pl::data::build_prompts(corpus.images), tc);
  const double fbd_before = trainer.evaluate().fbd;
  std::vector<double> held{trainer.held_loss(77)}, train;
  for (int e = 0; e < 5; ++e) {
    train.push_back(trainer.run_epoch_loss());
    held.push_back(trainer.held_loss(77));
  }
  const double fbd_after = trainer.evaluate().fbd;
  c.require(decreasing_with_plateaus(held, 1), "held-out-draw denoise loss " + series(held));
  c.require(fbd_after < fbd_before, "fbd " + fmt(fbd_before) + " -> " + fmt(fbd_after));
  c.note("denoise loss at fixed draws " + series(held) + " (epoch means " + series(train) + "); FBD " +
         fmt(fbd_before) + " -> " + fmt(fbd_after) + " on 16 fixed-seed samples");
  return c.outcome();
}

// --- 13 -----------------------------------------------------------------------------

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "peftlab");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return pl::cli::run(static_cast<int>(argv.size()), argv.data());
}

std::map<std::string, std::string> csv_files(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.path().extension() != ".csv") continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    out[fs::relative(e.path(), root).string()] = ss.str();
  }
  return out;
}

Outcome cli_determinism() {
  Checks c;
  setenv("PEFTLAB_LOG", "quiet", 1);
  const fs::path root = fs::temp_directory_path() / ("peftlab_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path conf = root / "smoke.ini";
  std::ofstream(conf) << "[data]\nn_images = 20\n"
                         "[vqa]\nlearning_rate = 0.001\nwarmup_steps = 2\naccumulation_steps = 1\nepochs = 2\n"
                         "[diffusion]\nlearning_rate = 0.003\nwarmup_steps = 2\nbatch_size = 1\n"
                         "accumulation_steps = 1\nepochs = 2\n"
                         "[eval]\nsamples = 8\n";
  std::ofstream(root / "prompts.txt") << "clinical colonoscopy image with one polyp in the central region\n"
                                         "clinical colonoscopy image with no polyp\n";
  std::vector<std::map<std::string, std::string>> runs;
  for (const char* name : {"run1", "run2"}) {
    const std::string w = (root / name).string(), cf = conf.string();
    const std::vector<std::vector<std::string>> steps = {
        {"gen-data", "--config", cf, "--out-dir", w},
        {"train-vqa", "--config", cf, "--data", w + "/corpus", "--out-dir", w + "/vqa"},
        {"eval-vqa", "--config", cf, "--data", w + "/corpus", "--checkpoint", w + "/vqa/checkpoint", "--out-dir",
         w + "/vqa_eval"},
        {"train-diffusion", "--config", cf, "--data", w + "/corpus", "--out-dir", w + "/diffusion"},
        {"generate", "--config", cf, "--adapters", w + "/diffusion/adapters", "--prompts",
         (root / "prompts.txt").string(), "--n", "8", "--out-dir", w + "/generated"},
        {"eval-gen", "--config", cf, "--real", w + "/corpus/images", "--generated", w + "/generated", "--out-dir",
         w + "/gen_eval"},
        {"report", "--config", cf, "--input", "vqa=" + w + "/vqa_eval", "--input", "vqa=" + w + "/gen_eval",
         "--input", "diffusion=" + w + "/diffusion", "--out-dir", w + "/report"}};
    for (const auto& s : steps) c.require(cli(s) == 0, std::string(name) + " " + s[0] + " exit code");
    runs.push_back(csv_files(w));
  }
  const std::set<std::string> expected = {"vqa/vqa_metrics.csv",         "vqa/losses.csv",
                                           "vqa_eval/vqa_eval.csv",       "diffusion/gen_metrics.csv",
                                           "diffusion/losses.csv",        "gen_eval/gen_eval.csv",
                                           "report/report.csv"};
  std::set<std::string> produced;
  for (const auto& [name, _] : runs[0]) produced.insert(name);
  c.require(produced == expected, std::to_string(produced.size()) + " CSV files, expected the 7 pipeline outputs");
  c.require(runs[0] == runs[1], "metric CSVs differ between runs");
  std::size_t bytes = 0;
  for (const auto& [_, body] : runs[0]) bytes += body.size();
  c.note(std::to_string(runs[0].size()) + " metric CSVs (" + std::to_string(bytes) + " bytes) byte-identical across two runs");
  fs::remove_all(root);
  return c.outcome();
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;  // 0: no runtime bound
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", 30, gradient_correctness},
      {2, "LoRA identity at init", 0, lora_identity},
      {3, "LoRA merge equivalence", 0, lora_merge},
      {4, "parameter accounting", 0, parameter_accounting},
      {5, "freeze contracts", 0, freeze_contracts},
      {6, "optimizer", 0, optimizer},
      {7, "metric oracles", 0, metric_oracles},
      {8, "Frechet distance", 0, frechet},
      {9, "FBD separation", 60, fbd_separation},
      {10, "VQA desk-scale learning", 300, vqa_learning},
      {11, "frozen vs trainable vision ablation", 0, ablation},
      {12, "diffusion desk-scale learning", 0, diffusion_learning},
      {13, "CLI determinism", 600, cli_determinism},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = cr.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what(), {}};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cr.budget_s > 0 && secs >= cr.budget_s) {
      o.pass = false;
      o.detail += "; runtime " + fmt(secs) + " s exceeds " + fmt(cr.budget_s) + " s";
    }
    if (!o.pass) ++failed;
    std::printf("%s %2d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", cr.id, cr.name, o.detail.c_str(), secs);
    std::istringstream rows(o.table);
    for (std::string line; std::getline(rows, line);) std::printf("       %s\n", line.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
