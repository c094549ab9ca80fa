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

#include "cafcn/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

namespace cafcn {

namespace {

void check_image(const Tensor<float>& img, const char* who) {
  if (img.ndim() != 3 || img.dim(0) != 3)
    throw std::invalid_argument(std::string(who) + ": expected a (3,H,W) image, got " +
                                img.shape_str());
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

}  // namespace

void write_png(const std::string& path, const Tensor<float>& img) {
  check_image(img, "write_png");
  const int h = img.dim(1), w = img.dim(2);

  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("write_png: cannot open " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("write_png: libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("write_png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: encoding " + path + " failed");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
        row[static_cast<std::size_t>(x) * 3 + static_cast<std::size_t>(c)] =
            static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor<float> read_png(const std::string& path) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("read_png: cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("read_png: libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("read_png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: " + path + " is not a valid PNG");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  // Normalize every input flavor to 8-bit RGB.
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  const int h = static_cast<int>(png_get_image_height(png, info));
  const int w = static_cast<int>(png_get_image_width(png, info));
  if (png_get_channels(png, info) != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: " + path + " did not normalize to RGB");
  }

  Tensor<float> img({3, h, w});
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) =
            static_cast<float>(row[static_cast<std::size_t>(x) * 3 + static_cast<std::size_t>(c)]) /
            255.0f;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

float sample_replicate(const Tensor<float>& img, int c, double y, double x) {
  const int h = img.dim(1), w = img.dim(2);
  const double fy = std::floor(y);
  const double fx = std::floor(x);
  const double ay = y - fy, ax = x - fx;
  const int y0 = std::clamp(static_cast<int>(fy), 0, h - 1);
  const int y1 = std::clamp(static_cast<int>(fy) + 1, 0, h - 1);
  const int x0 = std::clamp(static_cast<int>(fx), 0, w - 1);
  const int x1 = std::clamp(static_cast<int>(fx) + 1, 0, w - 1);
  const float top = img.at(c, y0, x0) + static_cast<float>(ax) * (img.at(c, y0, x1) - img.at(c, y0, x0));
  const float bot = img.at(c, y1, x0) + static_cast<float>(ax) * (img.at(c, y1, x1) - img.at(c, y1, x0));
  return top + static_cast<float>(ay) * (bot - top);
}

Tensor<float> resize_bilinear(const Tensor<float>& img, int out_h, int out_w) {
  check_image(img, "resize_bilinear");
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize_bilinear: empty target");
  const int h = img.dim(1), w = img.dim(2);
  Tensor<float> out({3, out_h, out_w});
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < out_h; ++y) {
      const double iy = (y + 0.5) * sy - 0.5;
      for (int x = 0; x < out_w; ++x)
        out.at(c, y, x) = sample_replicate(img, c, iy, (x + 0.5) * sx - 0.5);
    }
  return out;
}

std::array<double, 2> rotate_point(double x, double y, double cx, double cy, double degrees) {
  const double rad = degrees * M_PI / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double dx = x - cx, dy = y - cy;
  return {cx + cs * dx - sn * dy, cy + sn * dx + cs * dy};
}

Tensor<float> rotate_image(const Tensor<float>& img, double degrees) {
  check_image(img, "rotate_image");
  const int h = img.dim(1), w = img.dim(2);
  const double cx = (w - 1) * 0.5, cy = (h - 1) * 0.5;
  const double rad = degrees * M_PI / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  Tensor<float> out({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      // Inverse map: where did this output pixel come from.
      const double dx = x - cx, dy = y - cy;
      const double srcx = cx + cs * dx + sn * dy;
      const double srcy = cy - sn * dx + cs * dy;
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = sample_replicate(img, c, srcy, srcx);
    }
  return out;
}

void adjust_brightness(Tensor<float>& img, double delta) {
  if (delta == 0.0) return;
  for (auto& v : img.data) v = std::clamp(v + static_cast<float>(delta), 0.0f, 1.0f);
}

void adjust_contrast(Tensor<float>& img, double factor) {
  // The zero adjustment must be an exact identity, which the arithmetic
  // below is not for values within rounding distance of 0.5.
  if (factor == 1.0) return;
  for (auto& v : img.data)
    v = std::clamp((v - 0.5f) * static_cast<float>(factor) + 0.5f, 0.0f, 1.0f);
}

void adjust_hue(Tensor<float>& img, double delta) {
  check_image(img, "adjust_hue");
  if (delta == 0.0) return;
  const std::int64_t n = static_cast<std::int64_t>(img.dim(1)) * img.dim(2);
  float* r = img.p();
  float* g = img.p() + n;
  float* b = img.p() + 2 * n;
  const double shift = delta * 6.0;  // hue sextants
  for (std::int64_t i = 0; i < n; ++i) {
    const float mx = std::max({r[i], g[i], b[i]});
    const float mn = std::min({r[i], g[i], b[i]});
    const float d = mx - mn;
    if (d <= 0.0f) continue;  // gray pixel has no hue
    double hue;
    if (mx == r[i])
      hue = std::fmod(static_cast<double>(g[i] - b[i]) / d + 6.0, 6.0);
    else if (mx == g[i])
      hue = static_cast<double>(b[i] - r[i]) / d + 2.0;
    else
      hue = static_cast<double>(r[i] - g[i]) / d + 4.0;
    hue = std::fmod(hue + shift + 6.0, 6.0);

    const float v = mx;
    const float s = d / mx;
    const float cc = v * s;
    const float xx = cc * static_cast<float>(1.0 - std::fabs(std::fmod(hue, 2.0) - 1.0));
    const float m = v - cc;
    float rr = 0, gg = 0, bb = 0;
    switch (static_cast<int>(hue)) {
      case 0: rr = cc; gg = xx; break;
      case 1: rr = xx; gg = cc; break;
      case 2: gg = cc; bb = xx; break;
      case 3: gg = xx; bb = cc; break;
      case 4: rr = xx; bb = cc; break;
      default: rr = cc; bb = xx; break;
    }
    r[i] = rr + m;
    g[i] = gg + m;
    b[i] = bb + m;
  }
}

void box_blur(Tensor<float>& img, int radius) {
  check_image(img, "box_blur");
  if (radius <= 0) return;
  const int h = img.dim(1), w = img.dim(2);
  const float inv = 1.0f / static_cast<float>(2 * radius + 1);
  std::vector<float> tmp(static_cast<std::size_t>(std::max(h, w)));
  for (int c = 0; c < 3; ++c) {
    // Horizontal pass, replicate borders.
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        float acc = 0;
        for (int k = -radius; k <= radius; ++k)
          acc += img.at(c, y, std::clamp(x + k, 0, w - 1));
        tmp[static_cast<std::size_t>(x)] = acc * inv;
      }
      for (int x = 0; x < w; ++x) img.at(c, y, x) = tmp[static_cast<std::size_t>(x)];
    }
    // Vertical pass.
    for (int x = 0; x < w; ++x) {
      for (int y = 0; y < h; ++y) {
        float acc = 0;
        for (int k = -radius; k <= radius; ++k)
          acc += img.at(c, std::clamp(y + k, 0, h - 1), x);
        tmp[static_cast<std::size_t>(y)] = acc * inv;
      }
      for (int y = 0; y < h; ++y) img.at(c, y, x) = tmp[static_cast<std::size_t>(y)];
    }
  }
}

std::array<double, 2> Homography::map(double x, double y) const {
  const double u = h[0] * x + h[1] * y + h[2];
  const double v = h[3] * x + h[4] * y + h[5];
  const double z = h[6] * x + h[7] * y + h[8];
  if (std::fabs(z) < 1e-12) throw std::runtime_error("homography: point maps to infinity");
  return {u / z, v / z};
}

Homography Homography::inverse() const {
  // Adjugate of the 3x3; scale is irrelevant in homogeneous coordinates.
  const auto& a = h;
  Homography out;
  out.h = {a[4] * a[8] - a[5] * a[7], a[2] * a[7] - a[1] * a[8], a[1] * a[5] - a[2] * a[4],
           a[5] * a[6] - a[3] * a[8], a[0] * a[8] - a[2] * a[6], a[2] * a[3] - a[0] * a[5],
           a[3] * a[7] - a[4] * a[6], a[1] * a[6] - a[0] * a[7], a[0] * a[4] - a[1] * a[3]};
  double mag = 0;
  for (double v : out.h) mag = std::max(mag, std::fabs(v));
  if (mag < 1e-12) throw std::runtime_error("homography: singular, cannot invert");
  return out;
}

Homography Homography::quad_to_quad(const std::array<std::array<double, 2>, 4>& src,
                                    const std::array<std::array<double, 2>, 4>& dst) {
  // Solve the standard 8x8 system for h with h[8] fixed at 1.
  double a[8][9] = {};
  for (int i = 0; i < 4; ++i) {
    const double x = src[i][0], y = src[i][1];
    const double u = dst[i][0], v = dst[i][1];
    double* r0 = a[2 * i];
    double* r1 = a[2 * i + 1];
    r0[0] = x; r0[1] = y; r0[2] = 1; r0[6] = -u * x; r0[7] = -u * y; r0[8] = u;
    r1[3] = x; r1[4] = y; r1[5] = 1; r1[6] = -v * x; r1[7] = -v * y; r1[8] = v;
  }
  // Gaussian elimination with partial pivoting.
  for (int col = 0; col < 8; ++col) {
    int piv = col;
    for (int rr = col + 1; rr < 8; ++rr)
      if (std::fabs(a[rr][col]) > std::fabs(a[piv][col])) piv = rr;
    if (std::fabs(a[piv][col]) < 1e-12)
      throw std::runtime_error("homography: degenerate point configuration");
    std::swap_ranges(a[col], a[col] + 9, a[piv]);
    for (int rr = 0; rr < 8; ++rr) {
      if (rr == col) continue;
      const double f = a[rr][col] / a[col][col];
      for (int cc = col; cc < 9; ++cc) a[rr][cc] -= f * a[col][cc];
    }
  }
  Homography out;
  for (int i = 0; i < 8; ++i) out.h[static_cast<std::size_t>(i)] = a[i][8] / a[i][i];
  out.h[8] = 1.0;
  return out;
}

}  // namespace cafcn
