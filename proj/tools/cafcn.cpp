/*
 * Copyright 2026 the cafcn authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <omp.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "cafcn/config.hpp"
#include "cafcn/eval.hpp"
#include "cafcn/image.hpp"
#include "cafcn/net.hpp"
#include "cafcn/rng.hpp"
#include "cafcn/synth.hpp"
#include "cafcn/train.hpp"
#include "cafcn/word.hpp"

namespace {

using nlohmann::json;

cafcn::CliConfig load_config_or_default(const std::string& path) {
  if (path.empty()) return cafcn::CliConfig{};
  return cafcn::load_cli_config(path);
}

cafcn::Model<float> load_model(const std::string& path, const cafcn::NetConfig& fallback) {
  // The architecture embedded in the weight file is authoritative; the
  // config file only decides the shape of files that predate it.
  cafcn::NetConfig net = fallback;
  try {
    net = cafcn::load_weights_config(path);
  } catch (const std::runtime_error&) {
  }
  cafcn::Model<float> m = cafcn::init_weights<float>(net, 0);
  cafcn::load_weights(m, path);
  return m;
}

cafcn::Perturbation parse_perturbation(const std::string& name) {
  for (const cafcn::Perturbation p : cafcn::all_perturbations()) {
    if (name == cafcn::perturbation_name(p)) return p;
  }
  throw std::invalid_argument("unknown perturbation '" + name +
                              "' (expected pad10, stretch20, crop10 or crop20)");
}

json word_result_json(const cafcn::WordResult& r) {
  json chars = json::array();
  for (const cafcn::CharRegion& reg : r.regions) {
    // Map-scale boxes double back to network-input pixel coordinates.
    chars.push_back({{"char", cafcn::class_to_char(reg.class_id)},
                     {"box", {2.0 * reg.box.x_min, 2.0 * reg.box.y_min, 2.0 * reg.box.x_max,
                              2.0 * reg.box.y_max}},
                     {"conf", reg.confidence}});
  }
  return json{{"word", r.word}, {"chars", chars}};
}

int run_synth(const std::string& out, int count, std::uint64_t seed, const std::string& config,
              double curved_frac, int min_len, int max_len, const std::string& lexicon_out) {
  const cafcn::CliConfig cfg = load_config_or_default(config);
  cafcn::RenderStyle straight = cfg.style;
  cafcn::RenderStyle curved = cfg.style;
  if (curved.curvature.hi < 0.2) curved.curvature = {0.2, 0.45};

  // The first ceil(frac*count) samples are curved; training shuffles per
  // epoch, so on-disk order carries no bias.
  const int curved_count = static_cast<int>(std::ceil(curved_frac * count));
  cafcn::Rng words = cafcn::Rng::stream(seed, {"synth-cli", "words"});
  std::vector<cafcn::Sample> samples;
  samples.reserve(static_cast<std::size_t>(count));
  std::set<std::string> vocabulary;
  for (int i = 0; i < count; ++i) {
    const std::string word = cafcn::random_word(words, min_len, max_len);
    const cafcn::RenderStyle& style = i < curved_count ? curved : straight;
    const std::uint64_t render_seed =
        cafcn::Rng::stream(seed, {"synth-cli", "render", i}).next();
    samples.push_back(cafcn::render_word(word, style, render_seed));
    const std::string norm = cafcn::normalize_for_eval(word);
    if (!norm.empty()) vocabulary.insert(norm);
  }
  cafcn::write_dataset(samples, out);

  // Provenance next to the manifest: sample counts, word lengths, and the
  // curvature range the curved share was drawn from.
  const json meta{{"count", count},
                  {"curved_count", curved_count},
                  {"curved_curvature", {curved.curvature.lo, curved.curvature.hi}},
                  {"min_len", min_len},
                  {"max_len", max_len},
                  {"seed", seed}};
  std::ofstream meta_out(std::filesystem::path(out) / "synth_meta.json");
  meta_out << meta.dump(2) << std::endl;
  if (!meta_out) throw std::runtime_error("cannot write synth_meta.json in '" + out + "'");

  if (!lexicon_out.empty()) {
    std::ofstream lex(lexicon_out);
    if (!lex) throw std::runtime_error("cannot open '" + lexicon_out + "' for writing");
    for (const std::string& w : vocabulary) lex << w << "\n";
  }
  std::cout << "wrote " << count << " samples to " << out << " (" << curved_count << " curved)"
            << std::endl;
  return 0;
}

int run_train(const std::string& data, const std::string& out, std::uint64_t seed,
              const std::string& config, int epochs, int batch, int max_steps, int log_every,
              double crop_expand, bool no_augment, bool no_attention, bool no_deform,
              const std::string& resume) {
  cafcn::CliConfig cfg = load_config_or_default(config);
  if (epochs > 0) cfg.train.schedule.epochs = epochs;
  if (batch > 0) cfg.train.schedule.batch_size = batch;
  if (max_steps >= 0) cfg.train.max_steps_per_epoch = max_steps;
  if (log_every > 0) cfg.train.log_every = log_every;
  if (crop_expand >= 0.0) cfg.train.crop_expand = crop_expand;
  if (no_augment) cfg.train.augment = false;
  if (no_attention) cfg.net.attention_stages.clear();
  if (no_deform) cfg.net.deform_stages.clear();
  cfg.train.seed = seed;
  cfg.train.resume = resume;

  const auto start = std::chrono::steady_clock::now();
  const cafcn::LossReport last = cafcn::train(data, cfg.net, cfg.train, out);
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  json meta{{"dataset", data},
            {"dataset_size", static_cast<int>(cafcn::read_manifest(data).size())},
            {"seed", seed},
            {"epochs", cfg.train.schedule.epochs},
            {"batch_size", cfg.train.schedule.batch_size},
            {"base_lr", cfg.train.schedule.base_lr},
            {"first_decay_epoch", cfg.train.schedule.first_decay_epoch},
            {"max_steps_per_epoch", cfg.train.max_steps_per_epoch},
            {"augment", cfg.train.augment},
            {"crop_expand", cfg.train.crop_expand},
            {"net", json::parse(cfg.net.to_json_text())},
            {"elapsed_seconds", elapsed},
            {"threads", omp_get_max_threads()},
            {"final_loss", last.total()}};
  std::ofstream meta_out(std::filesystem::path(out) / "train_meta.json");
  meta_out << meta.dump(2) << std::endl;

  std::cout << "trained " << cfg.train.schedule.epochs << " epochs in " << elapsed
            << " s, final loss " << last.total() << ", model at " << out << "/model.cafw"
            << std::endl;
  return 0;
}

int run_predict(const std::string& model_path, const std::string& image, const std::string& config,
                const std::string& lexicon_path) {
  const cafcn::CliConfig cfg = load_config_or_default(config);
  cafcn::Model<float> m = load_model(model_path, cfg.net);
  const cafcn::Tensor<float> img = cafcn::read_png(image);
  const cafcn::WordResult r = cafcn::make_predictor(m)(img);
  json j = word_result_json(r);
  if (!lexicon_path.empty()) {
    const cafcn::Lexicon lex = cafcn::load_lexicon(lexicon_path);
    j["lexicon_match"] = cafcn::lexicon_match(r.word, lex);
  }
  std::cout << j.dump(2) << std::endl;
  return 0;
}

int run_eval(const std::string& model_path, const std::string& data, const std::string& config,
             const std::string& lexicon_path, const std::string& perturb, std::uint64_t seed,
             const std::string& out_json, bool print_json) {
  const cafcn::CliConfig cfg = load_config_or_default(config);
  cafcn::Model<float> m = load_model(model_path, cfg.net);

  cafcn::EvalOptions opt;
  opt.seed = seed;
  cafcn::Lexicon lex;
  if (!lexicon_path.empty()) {
    lex = cafcn::load_lexicon(lexicon_path);
    opt.lexicon = &lex;
  }
  if (perturb == "all") {
    opt.perturbations = cafcn::all_perturbations();
  } else if (!perturb.empty() && perturb != "none") {
    opt.perturbations = {parse_perturbation(perturb)};
  }

  const cafcn::EvalReport report = cafcn::evaluate(m, data, opt);
  if (!out_json.empty()) {
    std::ofstream f(out_json);
    if (!f) throw std::runtime_error("cannot open '" + out_json + "' for writing");
    f << cafcn::report_json(report);
  }
  std::cout << (print_json ? cafcn::report_json(report) : cafcn::report_table(report));
  return 0;
}

int run_perturb(const std::string& data, const std::string& out, const std::string& mode,
                std::uint64_t seed) {
  const cafcn::Perturbation p = parse_perturbation(mode);
  const std::vector<cafcn::SampleMeta> metas = cafcn::read_manifest(data);
  if (metas.empty()) throw std::invalid_argument("no samples in '" + data + "'");
  std::vector<cafcn::Sample> out_samples;
  out_samples.reserve(metas.size());
  for (const cafcn::SampleMeta& meta : metas) {
    const cafcn::Sample s = cafcn::load_sample(meta);
    const std::string base = std::filesystem::path(meta.image_path).filename().string();
    cafcn::Rng stream = cafcn::Rng::stream(seed, {"eval", cafcn::perturbation_name(p), base.c_str()});
    out_samples.push_back(cafcn::apply_perturbation(s, p, stream.next()));
  }
  cafcn::write_dataset(out_samples, out);
  std::cout << "wrote " << out_samples.size() << " " << mode << " samples to " << out << std::endl;
  return 0;
}

int run_visualize(const std::string& model_path, const std::string& image,
                  const std::string& out_png, const std::string& config) {
  const cafcn::CliConfig cfg = load_config_or_default(config);
  cafcn::Model<float> m = load_model(model_path, cfg.net);
  const cafcn::WordResult r = cafcn::visualize(m, image, out_png);
  std::cout << json{{"word", r.word}, {"out", out_png}}.dump(2) << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Character-attention FCN scene-text recognizer"};
  app.require_subcommand(1);

  std::string config, data, out, model, image, lexicon, perturb = "none", mode, resume;
  std::string lexicon_out, out_json;
  std::uint64_t seed = 0;
  int count = 1000, jobs = 0, epochs = -1, batch = -1, max_steps = -1, log_every = -1;
  int min_len = 3, max_len = 8;
  double curved_frac = 0.0, crop_expand = -1.0;
  bool no_augment = false, no_attention = false, no_deform = false, print_json = false;

  CLI::App* synth = app.add_subcommand("synth", "Render a synthetic word dataset");
  synth->add_option("--count", count, "number of samples")->required()->check(CLI::PositiveNumber);
  synth->add_option("--out", out, "output dataset directory")->required();
  synth->add_option("--seed", seed, "random seed");
  synth->add_option("--config", config, "JSON config (style section)");
  synth->add_option("--curved-frac", curved_frac, "fraction rendered on a curved baseline");
  synth->add_option("--min-len", min_len, "shortest word length");
  synth->add_option("--max-len", max_len, "longest word length");
  synth->add_option("--lexicon-out", lexicon_out, "write the unique normalized words here");

  CLI::App* train = app.add_subcommand("train", "Train a model on a rendered dataset");
  train->add_option("--data", data, "dataset directory")->required();
  train->add_option("--out", out, "run directory for checkpoints and metrics")->required();
  train->add_option("--seed", seed, "random seed");
  train->add_option("--jobs", jobs, "worker threads (0 = library default)");
  train->add_option("--config", config, "JSON config (net and train sections)");
  train->add_option("--epochs", epochs, "override epoch count");
  train->add_option("--batch", batch, "override batch size");
  train->add_option("--max-steps", max_steps, "override steps per epoch (0 = full pass)");
  train->add_option("--log-every", log_every, "batches between metric records");
  train->add_option("--crop-expand", crop_expand, "context around the word box");
  train->add_flag("--no-augment", no_augment, "train on fixed views");
  train->add_flag("--no-attention", no_attention, "ablation: drop attention heads");
  train->add_flag("--no-deform", no_deform, "ablation: plain convs in stages 4-5");
  train->add_option("--resume", resume, "checkpoint to continue from");

  CLI::App* predict = app.add_subcommand("predict", "Read one image, print the word as JSON");
  predict->add_option("--model", model, "weights file")->required();
  predict->add_option("--image", image, "input PNG")->required();
  predict->add_option("--config", config, "JSON config (net section)");
  predict->add_option("--lexicon", lexicon, "constrain the output to this word list");
  predict->add_option("--jobs", jobs, "worker threads (0 = library default)");

  CLI::App* eval = app.add_subcommand("eval", "Score a model over a dataset");
  eval->add_option("--model", model, "weights file")->required();
  eval->add_option("--data", data, "dataset directory")->required();
  eval->add_option("--config", config, "JSON config (net section)");
  eval->add_option("--lexicon", lexicon, "constrained decoding word list");
  eval->add_option("--perturb", perturb, "none, pad10, stretch20, crop10, crop20 or all");
  eval->add_option("--seed", seed, "seed for the randomized protocols");
  eval->add_option("--jobs", jobs, "worker threads (0 = library default)");
  eval->add_option("--out", out_json, "also write the JSON report to this file");
  eval->add_flag("--json", print_json, "print JSON instead of the table");

  CLI::App* pert = app.add_subcommand("perturb", "Write a perturbed copy of a dataset");
  pert->add_option("--data", data, "dataset directory")->required();
  pert->add_option("--out", out, "output dataset directory")->required();
  pert->add_option("--mode", mode, "pad10, stretch20, crop10 or crop20")->required();
  pert->add_option("--seed", seed, "seed for the randomized protocols");

  CLI::App* vis = app.add_subcommand("visualize", "Render the class map beside the input");
  vis->add_option("--model", model, "weights file")->required();
  vis->add_option("--image", image, "input PNG")->required();
  vis->add_option("--out", out, "output PNG")->required();
  vis->add_option("--config", config, "JSON config (net section)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (jobs > 0) omp_set_num_threads(jobs);
    if (app.got_subcommand(synth))
      return run_synth(out, count, seed, config, curved_frac, min_len, max_len, lexicon_out);
    if (app.got_subcommand(train))
      return run_train(data, out, seed, config, epochs, batch, max_steps, log_every, crop_expand,
                       no_augment, no_attention, no_deform, resume);
    if (app.got_subcommand(predict)) return run_predict(model, image, config, lexicon);
    if (app.got_subcommand(eval))
      return run_eval(model, data, config, lexicon, perturb, seed, out_json, print_json);
    if (app.got_subcommand(pert)) return run_perturb(data, out, mode, seed);
    if (app.got_subcommand(vis)) return run_visualize(model, image, out, config);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << std::endl;
    return 2;
  }
  return 2;  // unreachable: a subcommand is required
}
