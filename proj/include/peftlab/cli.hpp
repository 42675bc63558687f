// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver. Each subcommand reads inputs from disk, writes its
// outputs and a manifest.json into --out-dir, and returns an exit code:
// 0 on success, 1 on a runtime failure, 2 on a usage error.
#pragma once

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "peftlab/config.hpp"
#include "peftlab/dataset.hpp"
#include "peftlab/diffusion.hpp"
#include "peftlab/metrics.hpp"
#include "peftlab/vqa.hpp"

#ifndef PEFTLAB_VERSION
#define PEFTLAB_VERSION "0.0.0"
#endif

namespace peftlab::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Bad invocation: a missing flag or an invalid configuration.
class UsageError : public Error {
 public:
  using Error::Error;
};

inline constexpr const char* kVqaMetricsHeader = "epoch,bleu,rouge1,rougeL,meteor";
inline constexpr const char* kGenMetricsHeader = "epoch,fidelity,agreement,diversity,fbd";
inline constexpr const char* kVqaEvalHeader = "bleu,rouge1,rougeL,meteor";
inline constexpr const char* kGenEvalHeader = "fidelity,agreement,diversity,fbd";
inline constexpr const char* kVqaLossHeader = "epoch,train_loss";
inline constexpr const char* kDiffusionLossHeader = "epoch,train_loss,held_loss";
inline constexpr const char* kReportHeader = "experiment,bleu,rouge1,rougeL,meteor,fbd";

inline const char* kFilesHelp =
    "Output files (CSV columns are fixed and always in this order):\n"
    "  gen-data         corpus/{images/*.png,qa.jsonl,vocab.txt,manifest.json}\n"
    "  train-vqa        vqa_metrics.csv  epoch,bleu,rouge1,rougeL,meteor (validation split)\n"
    "                   losses.csv       epoch,train_loss\n"
    "                   checkpoint.{bin,json}, predictions.jsonl\n"
    "  eval-vqa         vqa_eval.csv     bleu,rouge1,rougeL,meteor\n"
    "                   predictions.jsonl\n"
    "  train-diffusion  gen_metrics.csv  epoch,fidelity,agreement,diversity,fbd (epoch 0 = before training)\n"
    "                   losses.csv       epoch,train_loss,held_loss\n"
    "                   adapters.{bin,json}\n"
    "  generate         gen_NNNN.png, prompts.txt\n"
    "  eval-gen         gen_eval.csv     fidelity,agreement,diversity,fbd\n"
    "  report           report.csv       experiment,bleu,rouge1,rougeL,meteor,fbd\n"
    "                   report.json\n"
    "Every command also writes manifest.json (command, config, seed, version).\n"
    "PEFTLAB_LOG=quiet|info|debug sets stderr verbosity (default info).";

// --- logging ------------------------------------------------------------------------

inline int log_level() {
  const char* env = std::getenv("PEFTLAB_LOG");
  if (!env) return 1;
  const std::string v(env);
  if (v == "quiet" || v == "0" || v == "off") return 0;
  if (v == "debug" || v == "2") return 2;
  return 1;
}

inline void log_info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << msg << '\n';
}

inline void log_debug(const std::string& msg) {
  if (log_level() >= 2) std::cerr << msg << '\n';
}

// --- small file helpers ----------------------------------------------------------------

inline std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string csv_row(const metrics::MetricReport& r) {
  return num(r.bleu) + "," + num(r.rouge1) + "," + num(r.rougeL) + "," + num(r.meteor);
}

inline std::string csv_row(const metrics::GenReport& r) {
  return num(r.fidelity) + "," + num(r.agreement) + "," + num(r.diversity) + "," + num(r.fbd);
}

inline void write_text(const fs::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out << body;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::string> last(const std::string& column) const {
    const auto it = std::find(header.begin(), header.end(), column);
    if (it == header.end() || rows.empty()) return std::nullopt;
    return rows.back().at(static_cast<std::size_t>(it - header.begin()));
  }
};

inline std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
  t.header = split_commas(line);
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    auto row = split_commas(line);
    if (row.size() != t.header.size()) {
      throw ParseError(path.string() + ": line " + std::to_string(n) + " has " + std::to_string(row.size()) +
                       " cells, header has " + std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

struct Context {
  config::RunConfig cfg;
  fs::path out_dir;
  std::string command;
};

inline void write_manifest(const Context& ctx, nlohmann::json inputs = nlohmann::json::object()) {
  nlohmann::json m = {{"command", ctx.command},
                      {"config", config::to_json(ctx.cfg)},
                      {"seed", ctx.cfg.data.seed},
                      {"version", PEFTLAB_VERSION},
                      {"inputs", std::move(inputs)}};
  write_text(ctx.out_dir / "manifest.json", m.dump(2) + "\n");
}

inline void write_predictions(const fs::path& path, const std::vector<vqa::Prediction>& preds) {
  std::ostringstream out;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& p = preds[i];
    out << nlohmann::json{{"id", std::to_string(i)},
                          {"image_id", p.image_id},
                          {"question", text::join(p.question)},
                          {"candidate", text::join(p.candidate)},
                          {"reference", text::join(p.reference)}}
               .dump()
        << '\n';
  }
  write_text(path, out.str());
}

// --- commands ------------------------------------------------------------------------------

inline void gen_data(const Context& ctx) {
  const auto& d = ctx.cfg.data;
  const auto corpus = data::generate_corpus(d.n_images, d.seed, d.image_size);
  const auto split = data::split_80_20(corpus.examples, d.seed);
  const auto vocab = data::Vocabulary::build(corpus.examples);
  data::save_corpus(ctx.out_dir / "corpus", corpus, split, vocab);
  write_manifest(ctx);
  log_info("gen-data: " + std::to_string(corpus.images.size()) + " images, " +
           std::to_string(corpus.examples.size()) + " questions, vocabulary " + std::to_string(vocab.size()));
}

inline void train_vqa(const Context& ctx, const fs::path& data_dir) {
  const auto loaded = data::load_corpus(data_dir);
  const auto images = vqa::image_index(loaded.corpus);
  vqa::VqaModel model(ctx.cfg.vqa_for(loaded.vocab.size(), loaded.corpus.image_size));
  const auto vision_before = checksum(model.vision_parameters());
  vqa::VqaTrainer trainer(model, loaded.vocab, images, loaded.split.train, loaded.split.validation,
                          ctx.cfg.vqa_train);
  if (trainer.warmup_clamped()) {
    log_info("train-vqa: warmup_steps exceeds the run length; using " +
             std::to_string(trainer.schedule().warmup_steps) + " steps");
  }
  std::string metrics_csv = std::string(kVqaMetricsHeader) + "\n";
  std::string loss_csv = std::string(kVqaLossHeader) + "\n";
  for (std::size_t e = 0; e < ctx.cfg.vqa_train.epochs; ++e) {
    const auto rec = trainer.run_epoch();
    metrics_csv += std::to_string(rec.epoch) + "," + csv_row(rec.validation) + "\n";
    loss_csv += std::to_string(rec.epoch) + "," + num(rec.train_loss) + "\n";
    log_info("train-vqa: epoch " + std::to_string(rec.epoch) + " loss " + num(rec.train_loss) + " rougeL " +
             num(rec.validation.rougeL));
  }
  if (model.config().freeze_vision && checksum(model.vision_parameters()) != vision_before) {
    throw ContractError("train-vqa: frozen vision encoder changed during training");
  }
  write_text(ctx.out_dir / "vqa_metrics.csv", metrics_csv);
  write_text(ctx.out_dir / "losses.csv", loss_csv);
  trainer.save_checkpoint(ctx.out_dir / "checkpoint");
  std::vector<vqa::Prediction> preds;
  trainer.evaluate(trainer.validation_examples(), &preds);
  write_predictions(ctx.out_dir / "predictions.jsonl", preds);
  write_manifest(ctx, {{"data", data_dir.string()}});
}

inline void eval_vqa(const Context& ctx, const fs::path& data_dir, const fs::path& checkpoint,
                     const std::string& split_name) {
  const auto loaded = data::load_corpus(data_dir);
  const auto a = archive::load(checkpoint);
  const auto mcfg = vqa::vqa_config_from_json(a.meta.at("config"));
  if (mcfg.vocab_size != loaded.vocab.size()) {
    throw InputError("eval-vqa: checkpoint vocabulary " + std::to_string(mcfg.vocab_size) +
                     " does not match corpus vocabulary " + std::to_string(loaded.vocab.size()));
  }
  vqa::VqaModel model(mcfg);
  archive::load_into(a, model.parameters());
  std::vector<data::VqaExample> examples;
  if (split_name == "validation" || split_name == "all") {
    examples.insert(examples.end(), loaded.split.validation.begin(), loaded.split.validation.end());
  }
  if (split_name == "train" || split_name == "all") {
    examples.insert(examples.end(), loaded.split.train.begin(), loaded.split.train.end());
  }
  if (examples.empty()) throw InputError("eval-vqa: no examples in split " + split_name);
  const auto images = vqa::image_index(loaded.corpus);
  std::vector<metrics::TextPair> pairs;
  std::vector<vqa::Prediction> preds;
  for (const auto& ex : vqa::encode_examples(loaded.vocab, examples)) {
    const auto tokens = vqa::generate_answer(model, images.at(ex.image_id), ex.question);
    pairs.push_back({loaded.vocab.decode_words(tokens), ex.reference});
    preds.push_back({ex.image_id, loaded.vocab.decode_words(ex.question), pairs.back().candidate, ex.reference});
  }
  const auto report = metrics::evaluate_text(pairs);
  write_text(ctx.out_dir / "vqa_eval.csv", std::string(kVqaEvalHeader) + "\n" + csv_row(report) + "\n");
  write_predictions(ctx.out_dir / "predictions.jsonl", preds);
  write_manifest(ctx, {{"data", data_dir.string()}, {"checkpoint", checkpoint.string()}, {"split", split_name}});
  log_info("eval-vqa: " + std::to_string(pairs.size()) + " answers, rougeL " + num(report.rougeL));
}

inline void train_diffusion(const Context& ctx, const fs::path& data_dir) {
  const auto loaded = data::load_corpus(data_dir);
  std::vector<Image> images;
  for (const auto& im : loaded.corpus.images) images.push_back(im.pixels);
  const auto prompts = data::build_prompts(loaded.corpus.images);

  diffusion::NoisePredictor model(ctx.cfg.diffusion.model);
  const auto lora_cfg = ctx.cfg.diffusion_lora();
  diffusion::inject_lora(model, lora_cfg, ctx.cfg.diffusion.model.seed);
  const auto base_before = checksum(model.base_parameters());
  const auto tcfg = ctx.cfg.diffusion_train();
  diffusion::DiffusionTrainer trainer(model, images, prompts, tcfg);
  if (trainer.warmup_clamped()) {
    log_info("train-diffusion: warmup_steps exceeds the run length; using " +
             std::to_string(trainer.lr_schedule().warmup_steps) + " steps");
  }
  std::string metrics_csv = std::string(kGenMetricsHeader) + "\n";
  std::string loss_csv = std::string(kDiffusionLossHeader) + "\n";
  metrics_csv += "0," + csv_row(trainer.evaluate()) + "\n";
  loss_csv += "0,," + num(trainer.held_loss(tcfg.seed)) + "\n";
  for (std::size_t e = 0; e < tcfg.epochs; ++e) {
    const auto rec = trainer.run_epoch();
    const double held = trainer.held_loss(tcfg.seed);
    metrics_csv += std::to_string(rec.epoch) + "," + csv_row(rec.report) + "\n";
    loss_csv += std::to_string(rec.epoch) + "," + num(rec.train_loss) + "," + num(held) + "\n";
    log_info("train-diffusion: epoch " + std::to_string(rec.epoch) + " loss " + num(rec.train_loss) + " held " +
             num(held) + " fbd " + num(rec.report.fbd));
  }
  const auto base_after = checksum(model.base_parameters());
  if (base_after != base_before) throw ContractError("train-diffusion: frozen base changed during training");
  write_text(ctx.out_dir / "gen_metrics.csv", metrics_csv);
  write_text(ctx.out_dir / "losses.csv", loss_csv);
  diffusion::save_adapters(ctx.out_dir / "adapters", model, lora_cfg,
                           {{"base_checksum", std::to_string(base_after)},
                            {"image_size", loaded.corpus.image_size}});
  write_manifest(ctx, {{"data", data_dir.string()}});
}

inline void generate(const Context& ctx, const fs::path& adapters, std::vector<std::string> prompts,
                     const std::optional<fs::path>& prompt_file, std::size_t n, std::optional<std::uint64_t> seed) {
  if (prompt_file) {
    for (auto& p : metrics::read_lines(*prompt_file)) prompts.push_back(std::move(p));
  }
  if (prompts.empty()) throw UsageError("generate: give --prompt or --prompts");
  const auto a = archive::load(adapters);
  const auto dcfg = diffusion::diffusion_config_from_json(a.meta.at("config"));
  diffusion::NoisePredictor model(dcfg);
  diffusion::inject_lora(model, diffusion::adapter_config(a), dcfg.seed);
  if (std::to_string(checksum(model.base_parameters())) != a.meta.at("base_checksum").get<std::string>()) {
    throw InputError("generate: rebuilt base weights do not match the adapters' base checksum");
  }
  diffusion::load_adapters(a, model);
  if (n == 0) n = prompts.size();
  std::vector<std::string> chosen;
  for (std::size_t i = 0; i < n; ++i) chosen.push_back(prompts[i % prompts.size()]);
  const std::uint64_t sample_seed = seed.value_or(ctx.cfg.eval.sample_seed);
  const auto image_size = a.meta.at("image_size").get<std::size_t>();
  const auto out = diffusion::generate_images(model, diffusion::NoiseSchedule(dcfg), diffusion::prompt_embedder(dcfg),
                                              chosen, sample_seed, image_size);
  std::string listing;
  for (std::size_t i = 0; i < out.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "gen_%04zu.png", i);
    write_png(ctx.out_dir / name, out[i]);
    listing += chosen[i] + "\n";
  }
  write_text(ctx.out_dir / "prompts.txt", listing);
  write_manifest(ctx, {{"adapters", adapters.string()}, {"sample_seed", sample_seed}, {"n", n}});
  log_info("generate: wrote " + std::to_string(out.size()) + " images");
}

inline void eval_gen(const Context& ctx, const fs::path& real_dir, const fs::path& gen_dir,
                     std::optional<fs::path> prompt_file) {
  const auto real = metrics::read_png_dir(real_dir);
  const auto gen = metrics::read_png_dir(gen_dir);
  const auto prompts = metrics::read_lines(prompt_file.value_or(gen_dir / "prompts.txt"));
  if (prompts.size() != gen.size()) {
    throw InputError("eval-gen: " + std::to_string(gen.size()) + " generated images but " +
                     std::to_string(prompts.size()) + " prompts");
  }
  const metrics::FeatureExtractor fx(ctx.cfg.eval.feature_seed);
  const auto report = metrics::evaluate_generation(real, gen, prompts, fx);
  write_text(ctx.out_dir / "gen_eval.csv", std::string(kGenEvalHeader) + "\n" + csv_row(report) + "\n");
  write_manifest(ctx, {{"real", real_dir.string()}, {"generated", gen_dir.string()}});
  log_info("eval-gen: fbd " + num(report.fbd));
}

// Final-row metrics of each experiment directory, one table row per name.
inline void report(const Context& ctx, const std::vector<std::string>& inputs) {
  std::vector<std::string> order;
  std::map<std::string, std::map<std::string, std::string>> cells;
  const auto take = [&](const std::string& name, const fs::path& path, std::initializer_list<const char*> cols) {
    if (!fs::exists(path)) return false;
    const auto t = read_csv(path);
    for (const char* c : cols)
      if (auto v = t.last(c)) cells[name][c] = *v;
    return true;
  };
  for (const auto& spec : inputs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
      throw UsageError("report: --input expects NAME=DIR, got '" + spec + "'");
    }
    const std::string name = spec.substr(0, eq);
    const fs::path dir = spec.substr(eq + 1);
    if (!fs::is_directory(dir)) throw InputError("report: no directory " + dir.string());
    if (std::find(order.begin(), order.end(), name) == order.end()) order.push_back(name);
    bool any = take(name, dir / "vqa_eval.csv", {"bleu", "rouge1", "rougeL", "meteor"});
    if (!any) any = take(name, dir / "vqa_metrics.csv", {"bleu", "rouge1", "rougeL", "meteor"});
    if (!take(name, dir / "gen_eval.csv", {"fbd"})) any = take(name, dir / "gen_metrics.csv", {"fbd"}) || any;
    else any = true;
    if (!any) throw InputError("report: no metric CSV in " + dir.string());
  }
  std::string csv = std::string(kReportHeader) + "\n";
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& name : order) {
    csv += name;
    nlohmann::json row = {{"experiment", name}};
    for (const char* c : {"bleu", "rouge1", "rougeL", "meteor", "fbd"}) {
      const auto it = cells[name].find(c);
      const std::string v = it == cells[name].end() ? "" : it->second;
      csv += "," + v;
      row[c] = v.empty() ? nlohmann::json(nullptr) : nlohmann::json(std::stod(v));
    }
    csv += "\n";
    rows.push_back(row);
  }
  write_text(ctx.out_dir / "report.csv", csv);
  write_text(ctx.out_dir / "report.json", rows.dump(2) + "\n");
  write_manifest(ctx, {{"inputs", inputs}});
}

// --- entry point -------------------------------------------------------------------------------

inline int run(int argc, char** argv) {
  CLI::App app{"peftlab: adapter fine-tuning experiments on synthetic colonoscopy data"};
  app.footer(kFilesHelp);
  app.require_subcommand(1);
  app.set_version_flag("--version", PEFTLAB_VERSION);

  std::optional<std::string> config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  app.add_option("--config", config_path, "run configuration file (see print-config)")->check(CLI::ExistingFile);
  app.add_option("--out-dir", out_dir, "directory for outputs; created if missing");
  app.add_option("--seed", seed, "overrides every seed in the configuration (generate: the sampling seed)");
  app.add_option("--epochs", epochs, "overrides vqa.epochs and diffusion.epochs")->check(CLI::PositiveNumber);
  app.fallthrough();

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus into OUT/corpus");
  auto* tv = app.add_subcommand("train-vqa", "train the VQA model, write checkpoint and per-epoch metrics");
  auto* ev = app.add_subcommand("eval-vqa", "score a VQA checkpoint on a corpus split");
  auto* td = app.add_subcommand("train-diffusion", "train diffusion adapters, write per-epoch generation metrics");
  auto* gn = app.add_subcommand("generate", "sample images for prompts from trained adapters");
  auto* eg = app.add_subcommand("eval-gen", "generation metrics between two image directories");
  auto* rp = app.add_subcommand("report", "merge experiment metrics into one table");
  auto* pc = app.add_subcommand("print-config", "print the configuration (defaults without --config)");

  std::string data_dir, checkpoint, split = "validation", adapters, real_dir, gen_dir;
  std::vector<std::string> prompts, inputs;
  std::optional<std::string> prompt_file, eval_prompts;
  std::size_t n_images = 0;
  for (auto* sub : {tv, ev, td}) sub->add_option("--data", data_dir, "corpus directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--checkpoint", checkpoint, "checkpoint stem written by train-vqa")->required();
  ev->add_option("--split", split, "validation, train or all")->check(CLI::IsMember({"validation", "train", "all"}));
  gn->add_option("--adapters", adapters, "adapter stem written by train-diffusion")->required();
  gn->add_option("--prompt", prompts, "prompt text; repeatable");
  gn->add_option("--prompts", prompt_file, "file with one prompt per line")->check(CLI::ExistingFile);
  gn->add_option("--n", n_images, "images to write, cycling through the prompts (default: one per prompt)");
  eg->add_option("--real", real_dir, "directory of real PNGs")->required()->check(CLI::ExistingDirectory);
  eg->add_option("--generated", gen_dir, "directory of generated PNGs")->required()->check(CLI::ExistingDirectory);
  eg->add_option("--prompts", eval_prompts, "prompt per generated image (default: GENERATED/prompts.txt)")
      ->check(CLI::ExistingFile);
  rp->add_option("--input", inputs, "NAME=DIR; repeatable, rows keep first-seen order")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    Context ctx;
    ctx.command = app.get_subcommands().front()->get_name();
    if (config_path) {
      try {
        ctx.cfg = config::load(*config_path);
      } catch (const ConfigError& e) {
        throw UsageError(e.what());
      }
    } else if (!pc->parsed()) {
      throw UsageError(ctx.command + ": --config is required (write one with print-config)");
    }
    if (seed && !gn->parsed()) ctx.cfg.set_seed(*seed);
    if (epochs) ctx.cfg.set_epochs(*epochs);

    if (pc->parsed()) {
      std::cout << config::to_ini(ctx.cfg);
      return kExitOk;
    }
    if (!out_dir) throw UsageError(ctx.command + ": --out-dir is required");
    ctx.out_dir = *out_dir;
    fs::create_directories(ctx.out_dir);

    if (gen->parsed()) gen_data(ctx);
    else if (tv->parsed()) train_vqa(ctx, data_dir);
    else if (ev->parsed()) eval_vqa(ctx, data_dir, checkpoint, split);
    else if (td->parsed()) train_diffusion(ctx, data_dir);
    else if (gn->parsed()) generate(ctx, adapters, prompts, prompt_file ? std::optional<fs::path>(*prompt_file) : std::nullopt, n_images, seed);
    else if (eg->parsed()) eval_gen(ctx, real_dir, gen_dir, eval_prompts ? std::optional<fs::path>(*eval_prompts) : std::nullopt);
    else if (rp->parsed()) report(ctx, inputs);
    return kExitOk;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\nRun with --help for usage.\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace peftlab::cli
