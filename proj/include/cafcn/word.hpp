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

#ifndef CAFCN_WORD_HPP
#define CAFCN_WORD_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "cafcn/geometry.hpp"
#include "cafcn/tensor.hpp"

namespace cafcn {

// Per-pixel class distribution at prediction-map scale, laid out (h, w, C).
// Every pixel's channel vector is softmax-normalized: entries in [0, 1]
// summing to 1 within 1e-5.
struct ProbMap {
  Tensor<float> values;

  int height() const { return values.dim(0); }
  int width() const { return values.dim(1); }
  int channels() const { return values.dim(2); }
  float at(int y, int x, int c) const { return values.at(y, x, c); }
  float& at(int y, int x, int c) { return values.at(y, x, c); }
};

// Builds a ProbMap from raw class scores laid out (C, h, w) by applying a
// per-pixel softmax and transposing. This is the bridge from the network
// head to word formation.
ProbMap probmap_from_logits(const Tensor<float>& logits);

// Throws std::invalid_argument when shape or normalization is off.
void validate_probmap(const ProbMap& m);

// A pixel is foreground when its strongest character class (background
// excluded) reaches this probability.
constexpr double kBinarizeThreshold = 240.0 / 255.0;

// Components smaller than this are dropped as noise speckle.
constexpr int kMinRegionPixels = 2;

// Foreground mask, (h, w), 1 where max over classes 1..C-1 >= thresh.
Tensor<std::uint8_t> binarize(const ProbMap& m, double thresh = kBinarizeThreshold);

// Maximal 8-connected foreground components. Components are ordered by
// their first row-major pixel; each component's pixels are row-major
// ascending indices into the mask.
std::vector<std::vector<int>> connected_components(const Tensor<std::uint8_t>& mask);

// One decoded character: its pixels, the winning class, and where it sits.
struct CharRegion {
  std::vector<int> pixels;          // row-major indices, ascending
  int class_id = 0;                 // argmax over classes 1..C-1
  std::vector<double> mean_scores;  // per-class average over the pixels
  double confidence = 0.0;          // mean_scores[class_id]
  CharBox box;                      // pixel extents at map scale
  double centroid_x = 0.0;          // mean pixel column
};

// Averages the map over the region and picks the strongest character
// class; ties go to the smaller class index. Throws on an empty region or
// out-of-bounds pixel indices.
CharRegion assign_class(const std::vector<int>& pixels, const ProbMap& m);

// A decoded word: regions sorted left to right by centroid column, one
// character per region.
struct WordResult {
  std::string word;  // UTF-8; the special class renders as "□"
  std::vector<CharRegion> regions;
};

// Full decoding pipeline: binarize, find 8-connected components, drop
// specks below min_region pixels, vote a class per region, sort left to
// right. An all-background map yields an empty word.
WordResult form_word(const ProbMap& m, double thresh = kBinarizeThreshold,
                     int min_region = kMinRegionPixels);

}  // namespace cafcn

#endif  // CAFCN_WORD_HPP
