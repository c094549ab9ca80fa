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

#include "cafcn/synth.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "cafcn/image.hpp"

namespace cafcn {
namespace {

constexpr int kGlyphRows = 7;
constexpr int kGlyphCols = 5;

struct GlyphArt {
  char key;
  std::array<const char*, kGlyphRows> rows;
};

// Hand-drawn 5x7 alphabet. Similar-looking pairs are deliberately pulled
// apart: '0' carries an inner diagonal that 'o' lacks, '1'/'l'/'i' differ
// by flag, hook and dot, 'z' stays at x-height while '2' is full height.
constexpr GlyphArt kFont[] = {
    {'0', {".###.",
           "#...#",
           "#..##",
           "#.#.#",
           "##..#",
           "#...#",
           ".###."}},
    {'1', {"..#..",
           ".##..",
           "..#..",
           "..#..",
           "..#..",
           "..#..",
           "#####"}},
    {'2', {".###.",
           "#...#",
           "....#",
           "..##.",
           ".#...",
           "#....",
           "#####"}},
    {'3', {"####.",
           "....#",
           "...#.",
           "..##.",
           "....#",
           "#...#",
           ".###."}},
    {'4', {"...#.",
           "..##.",
           ".#.#.",
           "#..#.",
           "#####",
           "...#.",
           "...#."}},
    {'5', {"#####",
           "#....",
           "####.",
           "....#",
           "....#",
           "#...#",
           ".###."}},
    {'6', {"..##.",
           ".#...",
           "#....",
           "####.",
           "#...#",
           "#...#",
           ".###."}},
    {'7', {"#####",
           "....#",
           "...#.",
           "..#..",
           "..#..",
           ".#...",
           ".#..."}},
    {'8', {".###.",
           "#...#",
           "#...#",
           ".###.",
           "#...#",
           "#...#",
           ".###."}},
    {'9', {".###.",
           "#...#",
           "#...#",
           ".####",
           "....#",
           "...#.",
           ".##.."}},
    {'a', {".....",
           ".....",
           ".###.",
           "....#",
           ".####",
           "#...#",
           ".####"}},
    {'b', {"#....",
           "#....",
           "####.",
           "#...#",
           "#...#",
           "#...#",
           "####."}},
    {'c', {".....",
           ".....",
           ".###.",
           "#....",
           "#....",
           "#....",
           ".###."}},
    {'d', {"....#",
           "....#",
           ".####",
           "#...#",
           "#...#",
           "#...#",
           ".####"}},
    {'e', {".....",
           ".....",
           ".###.",
           "#...#",
           "#####",
           "#....",
           ".###."}},
    {'f', {"..##.",
           ".#...",
           "####.",
           ".#...",
           ".#...",
           ".#...",
           ".#..."}},
    {'g', {".....",
           ".####",
           "#...#",
           "#...#",
           ".####",
           "....#",
           ".###."}},
    {'h', {"#....",
           "#....",
           "####.",
           "#...#",
           "#...#",
           "#...#",
           "#...#"}},
    {'i', {"..#..",
           ".....",
           ".##..",
           "..#..",
           "..#..",
           "..#..",
           ".###."}},
    {'j', {"...#.",
           ".....",
           "..##.",
           "...#.",
           "...#.",
           "#..#.",
           ".##.."}},
    {'k', {"#....",
           "#....",
           "#..#.",
           "#.#..",
           "##...",
           "#.#..",
           "#..#."}},
    {'l', {".#...",
           ".#...",
           ".#...",
           ".#...",
           ".#...",
           ".#...",
           "..##."}},
    {'m', {".....",
           ".....",
           "##.#.",
           "#.#.#",
           "#.#.#",
           "#.#.#",
           "#.#.#"}},
    {'n', {".....",
           ".....",
           "####.",
           "#...#",
           "#...#",
           "#...#",
           "#...#"}},
    {'o', {".....",
           ".....",
           ".###.",
           "#...#",
           "#...#",
           "#...#",
           ".###."}},
    {'p', {".....",
           ".....",
           "####.",
           "#...#",
           "####.",
           "#....",
           "#...."}},
    {'q', {".....",
           ".....",
           ".####",
           "#...#",
           ".####",
           "....#",
           "....#"}},
    {'r', {".....",
           ".....",
           "#.##.",
           "##...",
           "#....",
           "#....",
           "#...."}},
    {'s', {".....",
           ".....",
           ".####",
           "#....",
           ".###.",
           "....#",
           "####."}},
    {'t', {".#...",
           ".#...",
           "####.",
           ".#...",
           ".#...",
           ".#...",
           "..##."}},
    {'u', {".....",
           ".....",
           "#...#",
           "#...#",
           "#...#",
           "#...#",
           ".####"}},
    {'v', {".....",
           ".....",
           "#...#",
           "#...#",
           "#...#",
           ".#.#.",
           "..#.."}},
    {'w', {".....",
           ".....",
           "#.#.#",
           "#.#.#",
           "#.#.#",
           "#.#.#",
           ".#.#."}},
    {'x', {".....",
           ".....",
           "#...#",
           ".#.#.",
           "..#..",
           ".#.#.",
           "#...#"}},
    {'y', {".....",
           ".....",
           "#...#",
           "#...#",
           ".#.#.",
           "..#..",
           ".#..."}},
    {'z', {".....",
           ".....",
           "#####",
           "...#.",
           "..#..",
           ".#...",
           "#####"}},
    {'#', {".#.#.",
           "#####",
           ".#.#.",
           ".#.#.",
           "#####",
           ".#.#.",
           "....."}},
};

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

// Binary glyph value with zero outside the bitmap.
double glyph_ink(const std::array<const char*, kGlyphRows>& rows, int r, int c) {
  if (r < 0 || r >= kGlyphRows || c < 0 || c >= kGlyphCols) return 0.0;
  return rows[r][c] == '#' ? 1.0 : 0.0;
}

// Bilinear read of the binary bitmap at fractional (row, col).
double glyph_coverage(const std::array<const char*, kGlyphRows>& rows, double r, double c) {
  const int r0 = static_cast<int>(std::floor(r));
  const int c0 = static_cast<int>(std::floor(c));
  const double fr = r - r0;
  const double fc = c - c0;
  const double v00 = glyph_ink(rows, r0, c0);
  const double v01 = glyph_ink(rows, r0, c0 + 1);
  const double v10 = glyph_ink(rows, r0 + 1, c0);
  const double v11 = glyph_ink(rows, r0 + 1, c0 + 1);
  return (1.0 - fr) * ((1.0 - fc) * v00 + fc * v01) + fr * ((1.0 - fc) * v10 + fc * v11);
}

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

void require_range(const Range& r, double lo, double hi, const char* what) {
  if (!(r.lo <= r.hi) || r.lo < lo || r.hi > hi) {
    throw std::invalid_argument(std::string(what) + " range out of bounds");
  }
}

// Removes the characters whose boxes were dropped; drop[i] refers to the
// i-th non-whitespace character.
std::string drop_marked_chars(const std::string& word, const std::vector<bool>& drop) {
  std::string out;
  std::size_t k = 0;
  for (char c : word) {
    if (is_space(c)) {
      out += c;
      continue;
    }
    if (!drop[k++]) out += c;
  }
  return out;
}

// Rotates image and boxes together. Boxes are re-enclosed by the bounding
// box of their rotated corners and clamped; characters whose boxes collapse
// are removed from the word.
Sample rotate_sample(const Sample& s, double degrees) {
  const int h = s.image.dim(1);
  const int w = s.image.dim(2);
  const double cx = (w - 1) / 2.0;
  const double cy = (h - 1) / 2.0;

  Sample out;
  out.image = rotate_image(s.image, degrees);
  std::vector<bool> drop(s.boxes.size(), false);
  for (std::size_t i = 0; i < s.boxes.size(); ++i) {
    const CharBox& b = s.boxes[i];
    const double xs[4] = {b.x_min, b.x_max, b.x_max, b.x_min};
    const double ys[4] = {b.y_min, b.y_min, b.y_max, b.y_max};
    double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
    for (int k = 0; k < 4; ++k) {
      const auto p = rotate_point(xs[k], ys[k], cx, cy, degrees);
      x0 = std::min(x0, p[0]);
      y0 = std::min(y0, p[1]);
      x1 = std::max(x1, p[0]);
      y1 = std::max(y1, p[1]);
    }
    CharBox nb;
    nb.x_min = std::clamp(x0, 0.0, static_cast<double>(w));
    nb.x_max = std::clamp(x1, 0.0, static_cast<double>(w));
    nb.y_min = std::clamp(y0, 0.0, static_cast<double>(h));
    nb.y_max = std::clamp(y1, 0.0, static_cast<double>(h));
    nb.class_id = b.class_id;
    if (nb.valid()) {
      out.boxes.push_back(nb);
    } else {
      drop[i] = true;
    }
  }
  out.word = drop_marked_chars(s.word, drop);
  return out;
}

}  // namespace

const std::array<const char*, 7>* glyph_bitmap(char c) {
  if (is_space(c)) return nullptr;
  const char folded = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (const GlyphArt& g : kFont) {
    if (g.key == folded) return &g.rows;
  }
  // Everything outside the alphabet draws as the placeholder glyph.
  return glyph_bitmap('#');
}

void RenderStyle::validate() const {
  if (glyph_height < 8.0 || glyph_height > 256.0) {
    throw std::invalid_argument("glyph_height out of bounds");
  }
  require_range(glyph_scale, 0.25, 4.0, "glyph_scale");
  require_range(spacing, 0.0, 2.0, "spacing");
  require_range(curvature, 0.0, 0.5, "curvature");
  require_range(rotation_deg, -45.0, 45.0, "rotation_deg");
  require_range(fg_level, 0.0, 1.0, "fg_level");
  require_range(bg_level, 0.0, 1.0, "bg_level");
  if (tint < 0.0 || tint > 0.5) throw std::invalid_argument("tint out of bounds");
  if (invert_prob < 0.0 || invert_prob > 1.0) {
    throw std::invalid_argument("invert_prob out of bounds");
  }
  if (noise < 0.0 || noise > 0.25) throw std::invalid_argument("noise out of bounds");
  if (margin < 0.0 || margin > 2.0) throw std::invalid_argument("margin out of bounds");
}

void AugmentParams::validate() const {
  if (rotation_deg < 0.0 || rotation_deg > 15.0) {
    throw std::invalid_argument("rotation_deg out of bounds");
  }
  if (hue < 0.0 || hue > 0.5) throw std::invalid_argument("hue out of bounds");
  if (brightness < 0.0 || brightness > 1.0) {
    throw std::invalid_argument("brightness out of bounds");
  }
  if (contrast < 0.0 || contrast >= 1.0) {
    throw std::invalid_argument("contrast out of bounds");
  }
  if (blur_max_radius < 0) throw std::invalid_argument("blur_max_radius negative");
  if (targets.empty()) throw std::invalid_argument("no resize targets");
  for (const auto& [th, tw] : targets) {
    if (th < 8 || tw < 8) throw std::invalid_argument("resize target too small");
  }
}

Sample render_word(const std::string& word, const RenderStyle& style, std::uint64_t seed) {
  style.validate();
  Rng layout = Rng::stream(seed, {"synth", "layout"});
  Rng color = Rng::stream(seed, {"synth", "color"});
  Rng noise_rng = Rng::stream(seed, {"synth", "noise"});

  const double hg = style.glyph_height;

  // Layout pass: advance a cursor, remembering where each glyph goes.
  struct Plan {
    const std::array<const char*, kGlyphRows>* rows;
    int class_id;
    double x, w, h;
  };
  std::vector<Plan> plans;
  double cursor = 0.0;
  double max_h = hg;
  for (char c : word) {
    if (is_space(c)) {
      cursor += 0.55 * hg;
      continue;
    }
    if (!plans.empty()) cursor += style.spacing.draw(layout) * hg;
    const double gh = style.glyph_scale.draw(layout) * hg;
    const double gw = gh * (static_cast<double>(kGlyphCols) / kGlyphRows);
    plans.push_back({glyph_bitmap(c), char_to_class(c), cursor, gw, gh});
    cursor += gw;
    max_h = std::max(max_h, gh);
  }
  if (plans.empty()) {
    throw std::invalid_argument("render_word: no renderable characters in '" + word + "'");
  }
  const double text_w = cursor;
  const double amp = style.curvature.draw(layout) * hg;
  const double margin = style.margin * hg;

  const int out_w = static_cast<int>(std::ceil(text_w + 2.0 * margin));
  const int out_h = static_cast<int>(std::ceil(max_h + amp + 2.0 * margin));
  // Glyph bottoms sit on this line, lifted by the baseline arch.
  const double y_base = margin + amp + max_h;

  // One base gray per side plus a small independent tint per channel.
  double fg = style.fg_level.draw(color);
  double bg = style.bg_level.draw(color);
  if (color.bernoulli(style.invert_prob)) std::swap(fg, bg);
  float fgc[3], bgc[3];
  for (int c = 0; c < 3; ++c) fgc[c] = clamp01(fg + style.tint * color.uniform(-1.0, 1.0));
  for (int c = 0; c < 3; ++c) bgc[c] = clamp01(bg + style.tint * color.uniform(-1.0, 1.0));

  Sample s;
  s.word = word;
  s.image = Tensor<float>({3, out_h, out_w});
  for (int c = 0; c < 3; ++c) {
    std::fill_n(s.image.p() + static_cast<std::size_t>(c) * out_h * out_w,
                static_cast<std::size_t>(out_h) * out_w, bgc[c]);
  }

  std::vector<bool> drop(plans.size(), false);
  for (std::size_t i = 0; i < plans.size(); ++i) {
    const Plan& pl = plans[i];
    const double t = (pl.x + pl.w / 2.0) / text_w;
    const double lift = amp * std::sin(t * 3.14159265358979323846);
    const double gx = margin + pl.x;
    const double gy = y_base - lift - pl.h;

    const int px0 = std::max(0, static_cast<int>(std::floor(gx)));
    const int px1 = std::min(out_w, static_cast<int>(std::ceil(gx + pl.w)));
    const int py0 = std::max(0, static_cast<int>(std::floor(gy)));
    const int py1 = std::min(out_h, static_cast<int>(std::ceil(gy + pl.h)));

    int bx0 = out_w, bx1 = -1, by0 = out_h, by1 = -1;
    for (int py = py0; py < py1; ++py) {
      for (int px = px0; px < px1; ++px) {
        const double col = (px + 0.5 - gx) / pl.w * kGlyphCols - 0.5;
        const double row = (py + 0.5 - gy) / pl.h * kGlyphRows - 0.5;
        const double cov = glyph_coverage(*pl.rows, row, col);
        if (cov <= 0.0) continue;
        for (int c = 0; c < 3; ++c) {
          float& v = s.image.at(c, py, px);
          v = static_cast<float>(v * (1.0 - cov) + fgc[c] * cov);
        }
        if (cov >= 0.25) {
          bx0 = std::min(bx0, px);
          bx1 = std::max(bx1, px);
          by0 = std::min(by0, py);
          by1 = std::max(by1, py);
        }
      }
    }
    if (bx1 < bx0) {
      drop[i] = true;
      continue;
    }
    CharBox b;
    b.x_min = bx0;
    b.y_min = by0;
    b.x_max = bx1 + 1;
    b.y_max = by1 + 1;
    b.class_id = pl.class_id;
    s.boxes.push_back(b);
  }
  if (s.boxes.empty()) {
    throw std::invalid_argument("render_word: no ink produced for '" + word + "'");
  }
  s.word = drop_marked_chars(word, drop);

  if (style.noise > 0.0) {
    float* p = s.image.p();
    for (std::int64_t i = 0; i < s.image.numel(); ++i) {
      p[i] = clamp01(p[i] + noise_rng.uniform(-style.noise, style.noise));
    }
  }

  if (style.rotation_deg.lo != 0.0 || style.rotation_deg.hi != 0.0) {
    Rng rot = Rng::stream(seed, {"synth", "rotate"});
    s = rotate_sample(s, style.rotation_deg.draw(rot));
  }
  return s;
}

Sample augment(const Sample& s, const AugmentParams& p, std::uint64_t seed) {
  p.validate();
  Rng rng = Rng::stream(seed, {"augment"});

  Sample out = rotate_sample(s, rng.uniform(-p.rotation_deg, p.rotation_deg));
  adjust_hue(out.image, rng.uniform(-p.hue, p.hue));
  adjust_brightness(out.image, rng.uniform(-p.brightness, p.brightness));
  adjust_contrast(out.image, rng.uniform(1.0 - p.contrast, 1.0 + p.contrast));
  const int radius = rng.uniform_int(0, p.blur_max_radius);
  if (radius > 0) box_blur(out.image, radius);

  const auto [th, tw] = p.targets[rng.uniform_int(0, static_cast<int>(p.targets.size()) - 1)];
  const double sx = static_cast<double>(tw) / out.image.dim(2);
  const double sy = static_cast<double>(th) / out.image.dim(1);
  out.image = resize_bilinear(out.image, th, tw);
  for (CharBox& b : out.boxes) {
    b.x_min *= sx;
    b.x_max *= sx;
    b.y_min *= sy;
    b.y_max *= sy;
  }
  return out;
}

Sample perturb_pad(const Sample& s, double fx, double fy) {
  if (fx < 0.0 || fy < 0.0) throw std::invalid_argument("perturb_pad: negative fraction");
  const int h = s.image.dim(1);
  const int w = s.image.dim(2);
  const int left = static_cast<int>(std::lround(fx * w / 2.0));
  const int top = static_cast<int>(std::lround(fy * h / 2.0));
  const int out_w = w + 2 * left;
  const int out_h = h + 2 * top;

  Sample out;
  out.word = s.word;
  out.image = Tensor<float>({3, out_h, out_w});
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < out_h; ++y) {
      const int sy = std::clamp(y - top, 0, h - 1);
      for (int x = 0; x < out_w; ++x) {
        const int sx = std::clamp(x - left, 0, w - 1);
        out.image.at(c, y, x) = s.image.at(c, sy, sx);
      }
    }
  }
  out.boxes = s.boxes;
  for (CharBox& b : out.boxes) {
    b.x_min += left;
    b.x_max += left;
    b.y_min += top;
    b.y_max += top;
  }
  return out;
}

Sample stretch_to_quad(const Sample& s, const std::array<std::array<double, 2>, 4>& disp) {
  const int h = s.image.dim(1);
  const int w = s.image.dim(2);
  long d[4][2];
  for (int k = 0; k < 4; ++k) {
    for (int a = 0; a < 2; ++a) {
      if (disp[k][a] < 0.0) {
        throw std::invalid_argument("stretch_to_quad: displacements must point outward");
      }
      d[k][a] = std::lround(disp[k][a]);
    }
  }
  // Corner order: 0 = top-left, 1 = top-right, 2 = bottom-right,
  // 3 = bottom-left.
  const long dl = std::max(d[0][0], d[3][0]);
  const long dr = std::max(d[1][0], d[2][0]);
  const long dt = std::max(d[0][1], d[1][1]);
  const long db = std::max(d[2][1], d[3][1]);
  const int out_w = w + static_cast<int>(dl + dr);
  const int out_h = h + static_cast<int>(dt + db);

  // The output rectangle is the bounding box of the displaced quad; the
  // homography stretches the quad content to fill it.
  const std::array<std::array<double, 2>, 4> rect = {{{0.0, 0.0},
                                                      {static_cast<double>(out_w), 0.0},
                                                      {static_cast<double>(out_w), static_cast<double>(out_h)},
                                                      {0.0, static_cast<double>(out_h)}}};
  const std::array<std::array<double, 2>, 4> quad = {
      {{static_cast<double>(-d[0][0]), static_cast<double>(-d[0][1])},
       {static_cast<double>(w + d[1][0]), static_cast<double>(-d[1][1])},
       {static_cast<double>(w + d[2][0]), static_cast<double>(h + d[2][1])},
       {static_cast<double>(-d[3][0]), static_cast<double>(h + d[3][1])}}};
  // Shift the quad so the rectangle corners land on it: the rect origin
  // must map to the quad's top-left bound, which the max displacement set.
  // quad_to_quad handles that directly since corners are absolute.
  const Homography m = Homography::quad_to_quad(rect, quad);
  const Homography minv = m.inverse();

  Sample out;
  out.word = s.word;
  out.image = Tensor<float>({3, out_h, out_w});
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      // Pixel centers live at +0.5 in continuous coordinates; index
      // coordinates for sampling put integer values at centers.
      const auto p = m.map(x + 0.5, y + 0.5);
      for (int c = 0; c < 3; ++c) {
        out.image.at(c, y, x) = sample_replicate(s.image, c, p[1] - 0.5, p[0] - 0.5);
      }
    }
  }

  out.boxes = s.boxes;
  for (CharBox& b : out.boxes) {
    const double xs[4] = {b.x_min, b.x_max, b.x_max, b.x_min};
    const double ys[4] = {b.y_min, b.y_min, b.y_max, b.y_max};
    double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
    for (int k = 0; k < 4; ++k) {
      const auto p = minv.map(xs[k], ys[k]);
      x0 = std::min(x0, p[0]);
      y0 = std::min(y0, p[1]);
      x1 = std::max(x1, p[0]);
      y1 = std::max(y1, p[1]);
    }
    b.x_min = std::clamp(x0, 0.0, static_cast<double>(out_w));
    b.x_max = std::clamp(x1, 0.0, static_cast<double>(out_w));
    b.y_min = std::clamp(y0, 0.0, static_cast<double>(out_h));
    b.y_max = std::clamp(y1, 0.0, static_cast<double>(out_h));
  }
  return out;
}

Sample perturb_random_stretch(const Sample& s, double max_ratio, std::uint64_t seed) {
  if (max_ratio < 0.0 || max_ratio > 1.0) {
    throw std::invalid_argument("perturb_random_stretch: max_ratio out of bounds");
  }
  Rng rng = Rng::stream(seed, {"stretch"});
  const int h = s.image.dim(1);
  const int w = s.image.dim(2);
  std::array<std::array<double, 2>, 4> disp;
  for (int k = 0; k < 4; ++k) {
    disp[k][0] = rng.uniform(0.0, max_ratio) * w;
    disp[k][1] = rng.uniform(0.0, max_ratio) * h;
  }
  return stretch_to_quad(s, disp);
}

Sample perturb_expand_crop(const Sample& s, ExpandMode mode, double amount, std::uint64_t seed) {
  if (amount < 0.0 || amount > 4.0) {
    throw std::invalid_argument("perturb_expand_crop: amount out of bounds");
  }
  if (s.boxes.empty()) {
    throw std::invalid_argument("perturb_expand_crop: sample has no character boxes");
  }
  const int h = s.image.dim(1);
  const int w = s.image.dim(2);

  double tx0 = 1e300, ty0 = 1e300, tx1 = -1e300, ty1 = -1e300;
  for (const CharBox& b : s.boxes) {
    tx0 = std::min(tx0, b.x_min);
    ty0 = std::min(ty0, b.y_min);
    tx1 = std::max(tx1, b.x_max);
    ty1 = std::max(ty1, b.y_max);
  }
  const double tw = tx1 - tx0;
  const double th = ty1 - ty0;

  double x0, y0, x1, y1;
  if (mode == ExpandMode::kFixed) {
    x0 = tx0 - amount / 2.0 * tw;
    x1 = tx1 + amount / 2.0 * tw;
    y0 = ty0 - amount / 2.0 * th;
    y1 = ty1 + amount / 2.0 * th;
  } else {
    Rng rng = Rng::stream(seed, {"expand"});
    double dx[4], dy[4];
    for (int k = 0; k < 4; ++k) {
      dx[k] = rng.uniform(0.0, amount) * tw;
      dy[k] = rng.uniform(0.0, amount) * th;
    }
    // Crop the bounding box of the outward-displaced corner quad, corner
    // order top-left, top-right, bottom-right, bottom-left.
    x0 = tx0 - std::max(dx[0], dx[3]);
    x1 = tx1 + std::max(dx[1], dx[2]);
    y0 = ty0 - std::max(dy[0], dy[1]);
    y1 = ty1 + std::max(dy[2], dy[3]);
  }

  const int ix0 = std::clamp(static_cast<int>(std::floor(x0)), 0, w - 1);
  const int iy0 = std::clamp(static_cast<int>(std::floor(y0)), 0, h - 1);
  const int ix1 = std::clamp(static_cast<int>(std::ceil(x1)), ix0 + 1, w);
  const int iy1 = std::clamp(static_cast<int>(std::ceil(y1)), iy0 + 1, h);
  const int cw = ix1 - ix0;
  const int ch = iy1 - iy0;

  Sample out;
  out.image = Tensor<float>({3, ch, cw});
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < ch; ++y) {
      for (int x = 0; x < cw; ++x) {
        out.image.at(c, y, x) = s.image.at(c, iy0 + y, ix0 + x);
      }
    }
  }
  std::vector<bool> drop(s.boxes.size(), false);
  for (std::size_t i = 0; i < s.boxes.size(); ++i) {
    CharBox b = s.boxes[i];
    b.x_min = std::clamp(b.x_min - ix0, 0.0, static_cast<double>(cw));
    b.x_max = std::clamp(b.x_max - ix0, 0.0, static_cast<double>(cw));
    b.y_min = std::clamp(b.y_min - iy0, 0.0, static_cast<double>(ch));
    b.y_max = std::clamp(b.y_max - iy0, 0.0, static_cast<double>(ch));
    if (b.valid()) {
      out.boxes.push_back(b);
    } else {
      drop[i] = true;
    }
  }
  out.word = drop_marked_chars(s.word, drop);
  return out;
}

Sample tight_crop(const Sample& s) { return perturb_expand_crop(s, ExpandMode::kFixed, 0.0, 0); }

std::string random_word(Rng& rng, int min_len, int max_len) {
  if (min_len < 1 || max_len < min_len) {
    throw std::invalid_argument("random_word: bad length bounds");
  }
  static const char kLetters[] = "abcdefghijklmnopqrstuvwxyz";
  static const char kDigits[] = "0123456789";
  static const char kPunct[] = "-&$!?";
  const int n = rng.uniform_int(min_len, max_len);
  std::string word;
  word.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double r = rng.uniform();
    if (r < 0.78) {
      char c = kLetters[rng.uniform_int(0, 25)];
      if (rng.bernoulli(0.2)) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      word += c;
    } else if (r < 0.96) {
      word += kDigits[rng.uniform_int(0, 9)];
    } else {
      word += kPunct[rng.uniform_int(0, 4)];
    }
  }
  return word;
}

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

}  // namespace

void write_dataset(const std::vector<Sample>& samples, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");
  const fs::path manifest_path = fs::path(dir) / "labels.jsonl";
  std::ofstream manifest(manifest_path, std::ios::trunc);
  if (!manifest) {
    throw std::runtime_error("cannot write '" + manifest_path.string() + "'");
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char rel[32];
    std::snprintf(rel, sizeof rel, "images/%06zu.png", i + 1);
    write_png((fs::path(dir) / rel).string(), samples[i].image);
    json chars = json::array();
    for (const CharBox& b : samples[i].boxes) {
      chars.push_back({{"class", b.class_id}, {"box", {b.x_min, b.y_min, b.x_max, b.y_max}}});
    }
    const json line = {{"image", rel}, {"word", samples[i].word}, {"chars", chars}};
    manifest << line.dump() << '\n';
  }
  if (!manifest.good()) {
    throw std::runtime_error("write failed on '" + manifest_path.string() + "'");
  }
}

std::vector<SampleMeta> read_manifest(const std::string& dir) {
  const fs::path manifest_path = fs::path(dir) / "labels.jsonl";
  std::ifstream in(manifest_path);
  if (!in) {
    // A dataset directory without a manifest is an empty dataset; a
    // missing directory is a caller error.
    if (fs::is_directory(dir) && !fs::exists(manifest_path)) return {};
    throw std::runtime_error("cannot open '" + manifest_path.string() + "'");
  }
  std::vector<SampleMeta> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    SampleMeta meta;
    try {
      const json j = json::parse(line);
      meta.image_path = (fs::path(dir) / j.at("image").get<std::string>()).string();
      meta.word = j.at("word").get<std::string>();
      for (const json& cj : j.at("chars")) {
        CharBox b;
        b.class_id = cj.at("class").get<int>();
        const json& box = cj.at("box");
        if (!box.is_array() || box.size() != 4) {
          throw std::runtime_error("box must have 4 coordinates");
        }
        b.x_min = box[0].get<double>();
        b.y_min = box[1].get<double>();
        b.x_max = box[2].get<double>();
        b.y_max = box[3].get<double>();
        if (b.class_id < 1 || b.class_id >= kNumClasses) {
          throw std::runtime_error("class out of range");
        }
        meta.boxes.push_back(b);
      }
    } catch (const std::exception& e) {
      throw std::runtime_error(manifest_path.string() + ":" + std::to_string(lineno) + ": " +
                               e.what());
    }
    out.push_back(std::move(meta));
  }
  return out;
}

Sample load_sample(const SampleMeta& meta) {
  Sample s;
  s.image = read_png(meta.image_path);
  s.word = meta.word;
  s.boxes = meta.boxes;
  return s;
}

std::vector<Sample> read_dataset(const std::string& dir) {
  std::vector<Sample> out;
  for (const SampleMeta& meta : read_manifest(dir)) {
    out.push_back(load_sample(meta));
  }
  return out;
}

}  // namespace cafcn
