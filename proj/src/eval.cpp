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

#include "cafcn/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include "json.hpp"

#include "cafcn/image.hpp"
#include "cafcn/rng.hpp"

namespace cafcn {

double test_width_raw(int h, int w) {
  if (h < 1 || w < 1) throw std::invalid_argument("test_width_raw: empty image");
  return w > 4 * h ? 64.0 * w / h : 256.0;
}

TestSize test_size(int h, int w) {
  const double raw = test_width_raw(h, w);
  const long mult = std::lround(raw / 8.0);
  return TestSize{64, static_cast<int>(std::max(1L, mult)) * 8};
}

Tensor<float> resize_for_test(const Tensor<float>& img) {
  const TestSize ts = test_size(img.dim(1), img.dim(2));
  return resize_bilinear(img, ts.h, ts.w);
}

std::string normalize_for_eval(const std::string& word) {
  std::string out;
  for (const char ch : word) {
    const unsigned char u = static_cast<unsigned char>(ch);
    if (u >= 'a' && u <= 'z') out += static_cast<char>(u);
    else if (u >= 'A' && u <= 'Z') out += static_cast<char>(u - 'A' + 'a');
    else if (u >= '0' && u <= '9') out += static_cast<char>(u);
  }
  return out;
}

int edit_distance(const std::string& a, const std::string& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

Lexicon load_lexicon(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_lexicon: cannot open '" + path + "'");
  Lexicon lex;
  std::set<std::string> seen;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty()) continue;
    for (char& ch : line) {
      if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
    }
    if (!seen.insert(line).second) {
      throw std::invalid_argument("load_lexicon: duplicate entry '" + line + "'");
    }
    lex.words.push_back(line);
  }
  if (lex.words.empty()) throw std::invalid_argument("load_lexicon: '" + path + "' is empty");
  return lex;
}

std::string lexicon_match(const std::string& pred, const Lexicon& lex) {
  if (lex.words.empty()) throw std::invalid_argument("lexicon_match: empty lexicon");
  const std::string p = normalize_for_eval(pred);
  const std::string* best = nullptr;
  int best_d = 0;
  for (const std::string& w : lex.words) {
    const int d = edit_distance(p, w);
    if (!best || d < best_d || (d == best_d && w < *best)) {
      best = &w;
      best_d = d;
    }
  }
  return *best;
}

const char* perturbation_name(Perturbation p) {
  switch (p) {
    case Perturbation::kPad10: return "pad10";
    case Perturbation::kStretch20: return "stretch20";
    case Perturbation::kCrop10: return "crop10";
    case Perturbation::kCrop20: return "crop20";
  }
  throw std::invalid_argument("perturbation_name: unknown protocol");
}

std::vector<Perturbation> all_perturbations() {
  return {Perturbation::kPad10, Perturbation::kStretch20, Perturbation::kCrop10,
          Perturbation::kCrop20};
}

Sample apply_perturbation(const Sample& s, Perturbation p, std::uint64_t seed) {
  switch (p) {
    case Perturbation::kPad10: return perturb_pad(s, 0.10, 0.10);
    case Perturbation::kStretch20: return perturb_random_stretch(s, 0.20, seed);
    case Perturbation::kCrop10: return perturb_expand_crop(s, ExpandMode::kFixed, 0.10, 0);
    case Perturbation::kCrop20: return perturb_expand_crop(s, ExpandMode::kRandom, 0.20, seed);
  }
  throw std::invalid_argument("apply_perturbation: unknown protocol");
}

EvalRow eval_row(double ac_clean, double ac_pert) {
  EvalRow r;
  r.ac = ac_pert;
  r.gap = ac_pert - ac_clean;
  r.ratio = ac_clean > 0.0 ? -r.gap / ac_clean : 0.0;
  return r;
}

std::string report_json(const EvalReport& r) {
  nlohmann::json j;
  j["dataset"] = r.dataset;
  j["total"] = r.total;
  j["accuracy"] = r.accuracy;
  j["perturbations"] = nlohmann::json::object();
  for (const auto& [name, row] : r.perturbations) {
    j["perturbations"][name] = {{"ac", row.ac}, {"gap", row.gap}, {"ratio", row.ratio}};
  }
  return j.dump(2) + "\n";
}

std::string report_table(const EvalReport& r) {
  char buf[160];
  std::string out;
  std::snprintf(buf, sizeof buf, "dataset: %s  (%d samples)\n", r.dataset.c_str(), r.total);
  out += buf;
  std::snprintf(buf, sizeof buf, "%-10s %8s %8s %8s\n", "set", "ac", "gap", "ratio");
  out += buf;
  std::snprintf(buf, sizeof buf, "%-10s %8.4f %8s %8s\n", "clean", r.accuracy, "-", "-");
  out += buf;
  for (const auto& [name, row] : r.perturbations) {
    std::snprintf(buf, sizeof buf, "%-10s %8.4f %+8.4f %7.2f%%\n", name.c_str(), row.ac, row.gap,
                  100.0 * row.ratio);
    out += buf;
  }
  return out;
}

Predictor make_predictor(Model<float>& m) {
  return [&m](const Tensor<float>& img) {
    TestSize ts = test_size(img.dim(1), img.dim(2));
    // The backbone needs at least 16 columns; only absurdly tall crops hit
    // this clamp.
    ts.w = std::max(ts.w, 16);
    const Tensor<float> input = resize_bilinear(img, ts.h, ts.w);
    ForwardTrace<float> trace = forward(m, input, false);
    const ProbMap pm{std::move(trace.prob_map)};
    return form_word(pm);
  };
}

EvalReport evaluate_with(const Predictor& predict, const std::string& dataset_dir,
                         const EvalOptions& opt) {
  const std::vector<SampleMeta> metas = read_manifest(dataset_dir);
  if (metas.empty()) {
    throw std::invalid_argument("evaluate: no samples in '" + dataset_dir + "'");
  }

  auto matches = [&](const Sample& s, const std::string& gt) {
    const std::string raw = predict(s.image).word;
    const std::string pred =
        opt.lexicon ? lexicon_match(raw, *opt.lexicon) : normalize_for_eval(raw);
    return pred == gt;
  };

  EvalReport report;
  report.dataset = dataset_dir;
  report.total = static_cast<int>(metas.size());

  int clean_hits = 0;
  std::map<std::string, int> pert_hits;
  for (const SampleMeta& meta : metas) {
    const Sample s = load_sample(meta);
    const std::string gt = normalize_for_eval(s.word);
    if (matches(s, gt)) ++clean_hits;
    const std::string base = std::filesystem::path(meta.image_path).filename().string();
    for (const Perturbation p : opt.perturbations) {
      // Seeded by sample identity, not loop index, so shuffling the
      // manifest cannot change any perturbed image.
      Rng stream = Rng::stream(opt.seed, {"eval", perturbation_name(p), base.c_str()});
      const Sample v = apply_perturbation(s, p, stream.next());
      if (matches(v, gt)) ++pert_hits[perturbation_name(p)];
    }
  }

  report.accuracy = static_cast<double>(clean_hits) / report.total;
  for (const Perturbation p : opt.perturbations) {
    const double ac = static_cast<double>(pert_hits[perturbation_name(p)]) / report.total;
    report.perturbations[perturbation_name(p)] = eval_row(report.accuracy, ac);
  }
  return report;
}

EvalReport evaluate(Model<float>& m, const std::string& dataset_dir, const EvalOptions& opt) {
  return evaluate_with(make_predictor(m), dataset_dir, opt);
}

namespace {

std::array<std::uint8_t, 3> hsv_bytes(double h_deg, double s, double v) {
  const double c = v * s;
  const double hp = h_deg / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m0 = v - c;
  auto byte = [&](double t) {
    return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(t + m0, 0.0, 1.0)));
  };
  return {byte(r), byte(g), byte(b)};
}

}  // namespace

std::array<std::array<std::uint8_t, 3>, kNumClasses> class_palette() {
  std::array<std::array<std::uint8_t, 3>, kNumClasses> pal{};
  pal[0] = {0, 0, 0};
  for (int k = 1; k < kNumClasses; ++k) {
    // Walk the hue wheel; alternate brightness so neighbors differ even
    // when their hues are close.
    const double hue = (k - 1) * 360.0 / (kNumClasses - 1);
    pal[static_cast<std::size_t>(k)] = hsv_bytes(hue, 0.80, k % 2 ? 1.0 : 0.72);
  }
  return pal;
}

Tensor<float> render_visualization(const Tensor<float>& test_input, const ProbMap& m) {
  const int h = test_input.dim(1), w = test_input.dim(2);
  const int mh = m.height(), mw = m.width(), c = m.channels();
  const auto pal = class_palette();

  Tensor<float> panel({3, h, 2 * w});
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) panel.at(ch, y, x) = test_input.at(ch, y, x);

  for (int y = 0; y < h; ++y) {
    const int my = std::min(mh - 1, y * mh / h);
    for (int x = 0; x < w; ++x) {
      const int mx = std::min(mw - 1, x * mw / w);
      int best = 0;
      for (int k = 1; k < c; ++k) {
        if (m.at(my, mx, k) > m.at(my, mx, best)) best = k;
      }
      const auto& rgb = pal[static_cast<std::size_t>(std::min(best, kNumClasses - 1))];
      for (int ch = 0; ch < 3; ++ch)
        panel.at(ch, y, w + x) = static_cast<float>(rgb[static_cast<std::size_t>(ch)]) / 255.0f;
    }
  }
  return panel;
}

WordResult visualize(Model<float>& m, const std::string& image_path, const std::string& out_png) {
  const Tensor<float> img = read_png(image_path);
  TestSize ts = test_size(img.dim(1), img.dim(2));
  ts.w = std::max(ts.w, 16);
  const Tensor<float> input = resize_bilinear(img, ts.h, ts.w);
  ForwardTrace<float> trace = forward(m, input, false);
  const ProbMap pm{std::move(trace.prob_map)};
  write_png(out_png, render_visualization(input, pm));
  return form_word(pm);
}

}  // namespace cafcn
