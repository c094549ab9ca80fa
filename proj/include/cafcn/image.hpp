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

#include <array>
#include <string>

#include "cafcn/tensor.hpp"

namespace cafcn {

// Images are (3, H, W) float tensors with values in [0, 1].

// 8-bit RGB PNG round trip. Reading promotes grayscale/palette inputs to
// RGB and drops alpha.
void write_png(const std::string& path, const Tensor<float>& img);
Tensor<float> read_png(const std::string& path);

// Bilinear read at fractional (y, x) with the border pixel extended
// outward indefinitely.
float sample_replicate(const Tensor<float>& img, int c, double y, double x);

// Half-pixel-centered bilinear resize.
Tensor<float> resize_bilinear(const Tensor<float>& img, int out_h, int out_w);

// Rotates the content about the image center, same canvas size, border
// pixels replicated into uncovered corners. Positive angles turn the
// content counter-clockwise in (x right, y down) coordinates.
Tensor<float> rotate_image(const Tensor<float>& img, double degrees);
// Forward-maps a point the same way rotate_image moves content.
std::array<double, 2> rotate_point(double x, double y, double cx, double cy, double degrees);

void adjust_brightness(Tensor<float>& img, double delta);
void adjust_contrast(Tensor<float>& img, double factor);
// delta is a fraction of a full hue turn, e.g. 0.05 = 18 degrees.
void adjust_hue(Tensor<float>& img, double delta);
void box_blur(Tensor<float>& img, int radius);

// Plane projective map p' = H p in homogeneous coordinates.
struct Homography {
  std::array<double, 9> h;

  std::array<double, 2> map(double x, double y) const;
  Homography inverse() const;
  // The unique homography sending src[i] to dst[i] for 4 point pairs in
  // general position. Throws when the system is singular.
  static Homography quad_to_quad(const std::array<std::array<double, 2>, 4>& src,
                                 const std::array<std::array<double, 2>, 4>& dst);
};

}  // namespace cafcn
