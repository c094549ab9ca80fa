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

#include "cafcn/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cafcn {

int char_to_class(char32_t ch) {
  if (ch >= U'0' && ch <= U'9') return 1 + static_cast<int>(ch - U'0');
  if (ch >= U'a' && ch <= U'z') return 11 + static_cast<int>(ch - U'a');
  if (ch >= U'A' && ch <= U'Z') return 11 + static_cast<int>(ch - U'A');
  return kSpecialClass;
}

std::string class_to_char(int cls) {
  if (cls >= 1 && cls <= 10) return std::string(1, static_cast<char>('0' + cls - 1));
  if (cls >= 11 && cls <= 36) return std::string(1, static_cast<char>('a' + cls - 11));
  if (cls == kSpecialClass) return kSpecialGlyph;
  throw std::invalid_argument("class_to_char: index " + std::to_string(cls) + " is not a character class");
}

CharBox shrink_box(const CharBox& b, double r) {
  if (!(r > 0.0)) throw std::invalid_argument("shrink_box: ratio must be positive");
  if (!(b.x_min < b.x_max) || !(b.y_min < b.y_max))
    throw std::invalid_argument("shrink_box: degenerate box");
  const double w = b.x_max - b.x_min;
  const double h = b.y_max - b.y_min;
  CharBox g;
  g.x_min = (b.x_min + b.x_max - w * r) / 2.0;
  g.y_min = (b.y_min + b.y_max - h * r) / 2.0;
  g.x_max = (b.x_min + b.x_max + w * r) / 2.0;
  g.y_max = (b.y_min + b.y_max + h * r) / 2.0;
  g.class_id = b.class_id;
  return g;
}

namespace {

// Paints `value` over every pixel of `map` whose center lies inside the box
// scaled from image coordinates by (sx, sy).
void paint(Tensor<int>& map, const CharBox& g, double sx, double sy, int value) {
  const int h = map.dim(0), w = map.dim(1);
  const double x0 = g.x_min * sx, x1 = g.x_max * sx;
  const double y0 = g.y_min * sy, y1 = g.y_max * sy;
  const int jx0 = std::max(0, static_cast<int>(std::floor(x0 - 0.5)));
  const int jx1 = std::min(w - 1, static_cast<int>(std::ceil(x1)));
  const int iy0 = std::max(0, static_cast<int>(std::floor(y0 - 0.5)));
  const int iy1 = std::min(h - 1, static_cast<int>(std::ceil(y1)));
  for (int i = iy0; i <= iy1; ++i) {
    const double cy = i + 0.5;
    if (cy < y0 || cy >= y1) continue;
    for (int j = jx0; j <= jx1; ++j) {
      const double cx = j + 0.5;
      if (cx >= x0 && cx < x1) map.at(i, j) = value;
    }
  }
}

}  // namespace

LabelBundle rasterize_labels(const std::vector<CharBox>& boxes, int image_h, int image_w,
                             std::pair<int, int> pred_dims,
                             const std::map<int, std::pair<int, int>>& stage_dims) {
  if (image_h <= 0 || image_w <= 0) throw std::invalid_argument("rasterize_labels: empty image");
  LabelBundle out;
  out.pred_gt = Tensor<int>({pred_dims.first, pred_dims.second});
  for (const auto& [stage, dims] : stage_dims)
    out.attn_gt[stage] = Tensor<int>({dims.first, dims.second});

  for (const CharBox& raw : boxes) {
    CharBox b = raw;
    b.x_min = std::clamp(b.x_min, 0.0, static_cast<double>(image_w));
    b.x_max = std::clamp(b.x_max, 0.0, static_cast<double>(image_w));
    b.y_min = std::clamp(b.y_min, 0.0, static_cast<double>(image_h));
    b.y_max = std::clamp(b.y_max, 0.0, static_cast<double>(image_h));
    if (!(b.x_min < b.x_max) || !(b.y_min < b.y_max)) continue;
    if (b.class_id < 1 || b.class_id >= kNumClasses)
      throw std::invalid_argument("rasterize_labels: class_id out of range");

    const CharBox gp = shrink_box(b, kPredShrink);
    paint(out.pred_gt, gp, pred_dims.second / static_cast<double>(image_w),
          pred_dims.first / static_cast<double>(image_h), b.class_id);

    const CharBox ga = shrink_box(b, kAttnShrink);
    for (auto& [stage, map] : out.attn_gt) {
      const auto& dims = stage_dims.at(stage);
      paint(map, ga, dims.second / static_cast<double>(image_w),
            dims.first / static_cast<double>(image_h), 1);
    }
  }
  return out;
}

}  // namespace cafcn
