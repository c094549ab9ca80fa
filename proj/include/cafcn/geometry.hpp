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

#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cafcn/tensor.hpp"

namespace cafcn {

// Character classes: 0 background, 1-10 digits '0'-'9', 11-36 letters
// 'a'-'z' (case folded), 37 anything else.
constexpr int kNumClasses = 38;
constexpr int kSpecialClass = 37;

// Placeholder emitted for special-class regions in decoded words.
inline const char* kSpecialGlyph = "□";

int char_to_class(char32_t ch);
// Inverse for indices 1..36; index 37 yields U+25A1. Background is not a
// character and is rejected.
std::string class_to_char(int cls);

// Axis-aligned character rectangle in image pixel coordinates.
struct CharBox {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
  int class_id = 0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool valid() const { return x_min < x_max && y_min < y_max && class_id >= 1 && class_id < kNumClasses; }
};

// Contracts the box about its center by ratio r in each dimension; the
// class label is preserved. r must be in (0, 1] for supervision use, but any
// positive r is accepted.
CharBox shrink_box(const CharBox& b, double r);

// Per-image ground truth: the class map supervising the final prediction and
// one binary attention map per requested stage.
struct LabelBundle {
  Tensor<int> pred_gt;                 // (map_h, map_w), values in [0, kNumClasses)
  std::map<int, Tensor<int>> attn_gt;  // stage -> (h_s, w_s), values in {0, 1}
};

// Shrink ratios used to paint ground truth.
constexpr double kPredShrink = 0.25;
constexpr double kAttnShrink = 0.5;

// Rasterizes shrunk character boxes into a prediction map of pred_dims
// (height, width) and attention maps at the given per-stage sizes. Boxes are
// clamped to the image, painted in list order; later boxes overwrite earlier
// ones where they overlap. A pixel is covered when its center falls inside
// the scaled box (half-open on the max edges).
LabelBundle rasterize_labels(const std::vector<CharBox>& boxes, int image_h, int image_w,
                             std::pair<int, int> pred_dims,
                             const std::map<int, std::pair<int, int>>& stage_dims);

}  // namespace cafcn
