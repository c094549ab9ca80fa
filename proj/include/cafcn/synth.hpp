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
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cafcn/geometry.hpp"
#include "cafcn/rng.hpp"
#include "cafcn/tensor.hpp"

namespace cafcn {

// A word image with per-character tight boxes in reading order. boxes has
// one entry per non-whitespace character of word.
struct Sample {
  Tensor<float> image;  // (3, H, W) in [0, 1]
  std::string word;
  std::vector<CharBox> boxes;
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  double draw(Rng& rng) const { return lo == hi ? lo : rng.uniform(lo, hi); }
};

// Knobs for the embedded-font renderer. Words are drawn dark-on-light (or
// inverted) along a sine baseline whose amplitude is a fraction of the
// glyph height; the canvas keeps a margin of real background around the
// text so crop perturbations have context to include.
struct RenderStyle {
  double glyph_height = 32.0;         // base glyph size in pixels
  Range glyph_scale = {0.85, 1.15};   // per-glyph size jitter
  Range spacing = {0.10, 0.30};       // inter-glyph gap, fraction of glyph height
  Range curvature = {0.0, 0.0};       // baseline arch amplitude, fraction of glyph height
  Range rotation_deg = {0.0, 0.0};    // whole-word rotation
  Range fg_level = {0.0, 0.35};       // ink gray level
  Range bg_level = {0.65, 1.0};       // paper gray level
  double tint = 0.08;                 // per-channel color jitter
  double invert_prob = 0.25;          // chance of light-on-dark
  double noise = 0.03;                // per-pixel uniform noise
  double margin = 0.30;               // canvas margin, fraction of glyph height

  void validate() const;
};

struct AugmentParams {
  double rotation_deg = 15.0;  // max magnitude, both directions
  double hue = 0.05;           // fraction of a full hue turn
  double brightness = 0.15;
  double contrast = 0.20;
  int blur_max_radius = 1;
  std::vector<std::pair<int, int>> targets = {{32, 128}, {48, 192}, {64, 256}};

  void validate() const;
};

// Draws the word with the embedded font. Deterministic in (word, style,
// seed). Throws std::invalid_argument when nothing renderable remains
// (empty or all-whitespace word).
Sample render_word(const std::string& word, const RenderStyle& style, std::uint64_t seed);

// Random rotation, color jitter, blur, then resize to one of the target
// sizes. Boxes are re-enclosed after rotation and scaled by the resize;
// characters whose boxes collapse (clamped away) are dropped from the word.
Sample augment(const Sample& s, const AugmentParams& p, std::uint64_t seed);

// Grows the canvas by fx*W horizontally and fy*H vertically, split evenly
// per side, replicating border pixels outward.
Sample perturb_pad(const Sample& s, double fx, double fy);

// Displaces the four image corners outward by independent amounts up to
// max_ratio of the width/height, fills the resulting quadrilateral by
// border-replicate sampling and maps it back to an axis-aligned rectangle.
Sample perturb_random_stretch(const Sample& s, double max_ratio, std::uint64_t seed);

// Deterministic core of perturb_random_stretch: outward corner
// displacements in pixels, ordered top-left, top-right, bottom-right,
// bottom-left as (dx, dy). Displacements are rounded to whole pixels, so
// equal displacements on opposite sides reduce to perturb_pad exactly.
Sample stretch_to_quad(const Sample& s, const std::array<std::array<double, 2>, 4>& disp);

enum class ExpandMode { kFixed, kRandom };

// Re-crops around the word's tight box (the union of character boxes).
// kFixed grows the box by `amount` of its width/height split evenly;
// kRandom displaces each box corner outward by up to `amount` and crops the
// circumscribed axis-aligned rectangle. Crops are clamped to the canvas.
Sample perturb_expand_crop(const Sample& s, ExpandMode mode, double amount, std::uint64_t seed);

// The zero-expansion crop around the union of character boxes.
Sample tight_crop(const Sample& s);

// Letters (sometimes uppercase), digits, and the occasional punctuation
// mark.
std::string random_word(Rng& rng, int min_len = 3, int max_len = 8);

// The 5x7 bitmap rows ('#' = ink) for the glyph that draws character c, or
// nullptr for whitespace. Characters outside the class alphabet share one
// placeholder glyph.
const std::array<const char*, 7>* glyph_bitmap(char c);

// On-disk dataset: <dir>/images/NNNNNN.png plus <dir>/labels.jsonl.
struct SampleMeta {
  std::string image_path;  // absolute or dir-relative resolved path
  std::string word;
  std::vector<CharBox> boxes;
};

void write_dataset(const std::vector<Sample>& samples, const std::string& dir);
std::vector<SampleMeta> read_manifest(const std::string& dir);
Sample load_sample(const SampleMeta& meta);
std::vector<Sample> read_dataset(const std::string& dir);

}  // namespace cafcn
