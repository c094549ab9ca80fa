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

#ifndef CAFCN_EVAL_HPP
#define CAFCN_EVAL_HPP

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cafcn/net.hpp"
#include "cafcn/synth.hpp"
#include "cafcn/tensor.hpp"
#include "cafcn/word.hpp"

namespace cafcn {

struct TestSize {
  int h = 0;
  int w = 0;
};

// Inference canvas: height fixed at 64; width follows the aspect ratio
// when the image is wider than 4:1, else 256. The chosen width is then
// rounded to the nearest multiple of 8 (the network stride), minimum 8.
TestSize test_size(int h, int w);

// The pre-rounding width choice alone: 64*w/h on the wide branch, 256
// otherwise. Exposed so the rounding and branch logic are separately
// checkable.
double test_width_raw(int h, int w);

// Bilinear resize onto the inference canvas.
Tensor<float> resize_for_test(const Tensor<float>& img);

// Lowercases ASCII letters and strips everything but [a-z0-9]. Multi-byte
// characters (like the special-class placeholder) are stripped.
std::string normalize_for_eval(const std::string& word);

// Levenshtein distance over bytes.
int edit_distance(const std::string& a, const std::string& b);

// Constrained-decoding word list. Entries are lowercase and unique.
struct Lexicon {
  std::vector<std::string> words;
};

// One lowercase word per line; blank lines ignored. Throws on duplicate
// entries or an empty list.
Lexicon load_lexicon(const std::string& path);

// Nearest lexicon entry to the normalized prediction by edit distance;
// ties resolve to the lexicographically smallest word.
std::string lexicon_match(const std::string& pred, const Lexicon& lex);

// The four crop-robustness protocols: border padding by 10%, random
// corner stretch up to 20%, fixed 10% box expansion, random 20% corner
// expansion.
enum class Perturbation { kPad10, kStretch20, kCrop10, kCrop20 };

const char* perturbation_name(Perturbation p);
std::vector<Perturbation> all_perturbations();

// Applies one protocol. The seed must be derived from the sample identity
// so evaluation does not depend on iteration order.
Sample apply_perturbation(const Sample& s, Perturbation p, std::uint64_t seed);

// One report row: accuracy under a perturbation, the gap against the
// clean accuracy, and the relative decrease.
struct EvalRow {
  double ac = 0.0;
  double gap = 0.0;    // ac - ac_clean
  double ratio = 0.0;  // -gap / ac_clean, 0 when ac_clean is 0
};

EvalRow eval_row(double ac_clean, double ac_pert);

struct EvalReport {
  std::string dataset;
  int total = 0;
  double accuracy = 0.0;  // clean accuracy after normalization
  std::map<std::string, EvalRow> perturbations;
};

// JSON shape: {"dataset":.., "total":.., "accuracy":..,
// "perturbations": {"pad10": {"ac":..,"gap":..,"ratio":..}, ...}}
std::string report_json(const EvalReport& r);
// Fixed-width table with one row per perturbation.
std::string report_table(const EvalReport& r);

// Predicts a word from a raw [0,1] RGB image (any size); implementations
// handle their own inference resizing.
using Predictor = std::function<WordResult(const Tensor<float>&)>;

// The real pipeline: resize_for_test, forward pass, word formation.
Predictor make_predictor(Model<float>& m);

struct EvalOptions {
  const Lexicon* lexicon = nullptr;  // optional constrained decoding
  std::vector<Perturbation> perturbations;
  std::uint64_t seed = 0;  // stream for the randomized protocols
};

// Scores a predictor over a rendered dataset directory. A prediction
// counts when it equals the normalized ground truth (after lexicon_match
// when a lexicon is given); perturbation rows rerun the predictor on
// perturbed copies of each sample.
EvalReport evaluate_with(const Predictor& predict, const std::string& dataset_dir,
                         const EvalOptions& opt);

EvalReport evaluate(Model<float>& m, const std::string& dataset_dir, const EvalOptions& opt);

// Fixed color per class for prediction-map rendering; class 0 is black.
std::array<std::array<std::uint8_t, 3>, kNumClasses> class_palette();

// Side-by-side panel image: the inference input on the left, the argmax
// class map (upsampled to input size, palette-colored) on the right.
Tensor<float> render_visualization(const Tensor<float>& test_input, const ProbMap& m);

// Runs the model on one image file and writes the panel PNG.
WordResult visualize(Model<float>& m, const std::string& image_path, const std::string& out_png);

}  // namespace cafcn

#endif  // CAFCN_EVAL_HPP
