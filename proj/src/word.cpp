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

#include "cafcn/word.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

namespace cafcn {

ProbMap probmap_from_logits(const Tensor<float>& logits) {
  if (logits.ndim() != 3) {
    throw std::invalid_argument("probmap_from_logits: scores must be (C, h, w)");
  }
  const int c = logits.dim(0);
  const int h = logits.dim(1);
  const int w = logits.dim(2);
  if (c < 2) throw std::invalid_argument("probmap_from_logits: need at least two classes");

  ProbMap m{Tensor<float>({h, w, c})};
  std::vector<double> e(static_cast<std::size_t>(c));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double peak = logits.at(0, y, x);
      for (int k = 1; k < c; ++k) peak = std::max<double>(peak, logits.at(k, y, x));
      double sum = 0.0;
      for (int k = 0; k < c; ++k) {
        e[static_cast<std::size_t>(k)] = std::exp(logits.at(k, y, x) - peak);
        sum += e[static_cast<std::size_t>(k)];
      }
      for (int k = 0; k < c; ++k) {
        m.at(y, x, k) = static_cast<float>(e[static_cast<std::size_t>(k)] / sum);
      }
    }
  }
  return m;
}

void validate_probmap(const ProbMap& m) {
  if (m.values.ndim() != 3) {
    throw std::invalid_argument("ProbMap: values must be (h, w, C)");
  }
  const int h = m.height(), w = m.width(), c = m.channels();
  if (h < 1 || w < 1 || c < 2) {
    throw std::invalid_argument("ProbMap: degenerate shape");
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double sum = 0.0;
      for (int k = 0; k < c; ++k) {
        const float v = m.at(y, x, k);
        if (!(v >= 0.0f && v <= 1.0f)) {
          throw std::invalid_argument("ProbMap: probability outside [0, 1]");
        }
        sum += v;
      }
      if (std::abs(sum - 1.0) > 1e-5) {
        throw std::invalid_argument("ProbMap: channel sum off unity");
      }
    }
  }
}

Tensor<std::uint8_t> binarize(const ProbMap& m, double thresh) {
  validate_probmap(m);
  const int h = m.height(), w = m.width(), c = m.channels();
  Tensor<std::uint8_t> mask({h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float best = 0.0f;
      for (int k = 1; k < c; ++k) best = std::max(best, m.at(y, x, k));
      mask.at(y, x) = best >= thresh ? 1 : 0;
    }
  }
  return mask;
}

std::vector<std::vector<int>> connected_components(const Tensor<std::uint8_t>& mask) {
  if (mask.ndim() != 2) {
    throw std::invalid_argument("connected_components: mask must be (h, w)");
  }
  const int h = mask.dim(0), w = mask.dim(1);
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), 0);
  std::vector<std::vector<int>> comps;

  for (int start = 0; start < h * w; ++start) {
    if (!mask.data[static_cast<std::size_t>(start)] || seen[static_cast<std::size_t>(start)]) {
      continue;
    }
    std::vector<int> comp;
    std::deque<int> frontier{start};
    seen[static_cast<std::size_t>(start)] = 1;
    while (!frontier.empty()) {
      const int p = frontier.front();
      frontier.pop_front();
      comp.push_back(p);
      const int y = p / w, x = p % w;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          const int q = ny * w + nx;
          if (mask.data[static_cast<std::size_t>(q)] && !seen[static_cast<std::size_t>(q)]) {
            seen[static_cast<std::size_t>(q)] = 1;
            frontier.push_back(q);
          }
        }
      }
    }
    std::sort(comp.begin(), comp.end());
    comps.push_back(std::move(comp));
  }
  return comps;
}

CharRegion assign_class(const std::vector<int>& pixels, const ProbMap& m) {
  // Deliberately does not validate normalization: voting is plain
  // averaging and works on any per-pixel score vectors.
  if (pixels.empty()) {
    throw std::invalid_argument("assign_class: empty region");
  }
  const int h = m.height(), w = m.width(), c = m.channels();

  CharRegion r;
  r.pixels = pixels;
  std::sort(r.pixels.begin(), r.pixels.end());
  r.mean_scores.assign(static_cast<std::size_t>(c), 0.0);

  int min_x = w, max_x = -1, min_y = h, max_y = -1;
  double sum_x = 0.0;
  for (const int p : r.pixels) {
    if (p < 0 || p >= h * w) {
      throw std::invalid_argument("assign_class: pixel index outside the map");
    }
    const int y = p / w, x = p % w;
    min_x = std::min(min_x, x);
    max_x = std::max(max_x, x);
    min_y = std::min(min_y, y);
    max_y = std::max(max_y, y);
    sum_x += x;
    for (int k = 0; k < c; ++k) r.mean_scores[static_cast<std::size_t>(k)] += m.at(y, x, k);
  }
  const double n = static_cast<double>(r.pixels.size());
  for (double& s : r.mean_scores) s /= n;

  r.class_id = 1;
  for (int k = 2; k < c; ++k) {
    if (r.mean_scores[static_cast<std::size_t>(k)] >
        r.mean_scores[static_cast<std::size_t>(r.class_id)]) {
      r.class_id = k;
    }
  }
  r.confidence = r.mean_scores[static_cast<std::size_t>(r.class_id)];
  r.centroid_x = sum_x / n;
  r.box = CharBox{static_cast<double>(min_x), static_cast<double>(min_y),
                  static_cast<double>(max_x + 1), static_cast<double>(max_y + 1), r.class_id};
  return r;
}

WordResult form_word(const ProbMap& m, double thresh, int min_region) {
  if (min_region < 1) {
    throw std::invalid_argument("form_word: min_region must be positive");
  }
  const Tensor<std::uint8_t> mask = binarize(m, thresh);

  WordResult out;
  for (const std::vector<int>& comp : connected_components(mask)) {
    if (static_cast<int>(comp.size()) < min_region) continue;
    out.regions.push_back(assign_class(comp, m));
  }
  std::stable_sort(out.regions.begin(), out.regions.end(),
                   [](const CharRegion& a, const CharRegion& b) { return a.centroid_x < b.centroid_x; });
  for (const CharRegion& r : out.regions) out.word += class_to_char(r.class_id);
  return out;
}

}  // namespace cafcn
