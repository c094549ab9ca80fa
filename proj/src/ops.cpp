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

#include "cafcn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <stdexcept>

namespace cafcn {
namespace {

// Output positions are processed in tiles so the working set (one im2col
// block plus the touched output rows) stays cache resident. Each output
// element is produced by exactly one thread with a fixed reduction order,
// which keeps results bit-identical for any thread count.
constexpr int kTileN = 256;
constexpr int kTileM = 16;

template <typename T>
T* scratch(int slot, std::size_t n) {
  thread_local std::vector<T> bufs[4];
  auto& b = bufs[slot];
  if (b.size() < n) b.resize(n);
  return b.data();
}

struct ConvDims {
  int cin, h, w, cout, kh, kw, stride, pad_h, pad_w, ho, wo;
  std::int64_t k() const { return static_cast<std::int64_t>(cin) * kh * kw; }
  std::int64_t n() const { return static_cast<std::int64_t>(ho) * wo; }
};

template <typename T>
ConvDims conv_dims(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad_h, int pad_w) {
  if (x.ndim() != 3 || w.ndim() != 4)
    throw std::invalid_argument("conv2d: expected (C,H,W) input and (Cout,Cin,kh,kw) kernel");
  ConvDims d;
  d.cin = x.dim(0);
  d.h = x.dim(1);
  d.w = x.dim(2);
  d.cout = w.dim(0);
  d.kh = w.dim(2);
  d.kw = w.dim(3);
  d.stride = stride;
  d.pad_h = pad_h;
  d.pad_w = pad_w;
  if (w.dim(1) != d.cin)
    throw std::invalid_argument("conv2d: kernel expects " + std::to_string(w.dim(1)) +
                                " input channels, got " + std::to_string(d.cin));
  if (stride < 1 || pad_h < 0 || pad_w < 0) throw std::invalid_argument("conv2d: bad stride/pad");
  const int eh = d.h + 2 * pad_h - d.kh;
  const int ew = d.w + 2 * pad_w - d.kw;
  if (eh < 0 || ew < 0) throw std::invalid_argument("conv2d: kernel does not fit padded input");
  d.ho = eh / stride + 1;
  d.wo = ew / stride + 1;
  return d;
}

// Fills col[k][j] for output positions [n0, n0+nt), k = (ci, ky, kx) rows.
template <typename T>
void im2col_tile(const T* x, const ConvDims& d, std::int64_t n0, int nt, T* col) {
  for (int ci = 0; ci < d.cin; ++ci) {
    const T* xc = x + static_cast<std::int64_t>(ci) * d.h * d.w;
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        T* dst = col + (static_cast<std::int64_t>(ci) * d.kh * d.kw + ky * d.kw + kx) * nt;
        int j = 0;
        std::int64_t p = n0;
        while (j < nt) {
          const int oy = static_cast<int>(p / d.wo);
          const int ox = static_cast<int>(p % d.wo);
          const int seg = std::min<int>(nt - j, d.wo - ox);
          const int iy = oy * d.stride + ky - d.pad_h;
          if (iy < 0 || iy >= d.h) {
            std::memset(dst + j, 0, sizeof(T) * seg);
          } else if (d.stride == 1) {
            const int ix0 = ox + kx - d.pad_w;
            const int lead = std::clamp(-ix0, 0, seg);
            const int valid = std::clamp(d.w - ix0, 0, seg) - lead;
            if (lead > 0) std::memset(dst + j, 0, sizeof(T) * lead);
            if (valid > 0) std::memcpy(dst + j + lead, xc + iy * d.w + ix0 + lead, sizeof(T) * valid);
            const int tail = seg - lead - valid;
            if (tail > 0) std::memset(dst + j + lead + valid, 0, sizeof(T) * tail);
          } else {
            for (int s = 0; s < seg; ++s) {
              const int ix = (ox + s) * d.stride + kx - d.pad_w;
              dst[j + s] = (ix >= 0 && ix < d.w) ? xc[iy * d.w + ix] : T(0);
            }
          }
          j += seg;
          p += seg;
        }
      }
    }
  }
}

// y[m][n0..n0+nt) = bias[m] + sum_k wmat[m][k] * col[k][·]
template <typename T>
void gemm_tile(const T* wmat, const T* col, const T* bias, T* y, std::int64_t m_total,
               std::int64_t k_total, std::int64_t n_total, std::int64_t n0, int nt) {
  for (std::int64_t mb = 0; mb < m_total; mb += kTileM) {
    const std::int64_t mend = std::min<std::int64_t>(m_total, mb + kTileM);
    for (std::int64_t m = mb; m < mend; ++m) {
      T* yr = y + m * n_total + n0;
      const T bv = bias ? bias[m] : T(0);
      for (int j = 0; j < nt; ++j) yr[j] = bv;
    }
    for (std::int64_t k = 0; k < k_total; ++k) {
      const T* c = col + k * nt;
      for (std::int64_t m = mb; m < mend; ++m) {
        const T a = wmat[m * k_total + k];
        T* yr = y + m * n_total + n0;
#pragma omp simd
        for (int j = 0; j < nt; ++j) yr[j] += a * c[j];
      }
    }
  }
}

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* b, T* y, const ConvDims& d) {
  const std::int64_t n_total = d.n(), k_total = d.k();
  const std::int64_t ntiles = (n_total + kTileN - 1) / kTileN;
#pragma omp parallel for schedule(static)
  for (std::int64_t t = 0; t < ntiles; ++t) {
    const std::int64_t n0 = t * kTileN;
    const int nt = static_cast<int>(std::min<std::int64_t>(kTileN, n_total - n0));
    T* col = scratch<T>(0, static_cast<std::size_t>(k_total) * kTileN);
    im2col_tile(x, d, n0, nt, col);
    gemm_tile(w, col, b, y, d.cout, k_total, n_total, n0, nt);
  }
}

// dW += dY · col^T, accumulated tile by tile in a fixed order.
template <typename T>
void conv2d_backward_weights(const T* x, const T* dy, T* dw, const ConvDims& d) {
  const std::int64_t n_total = d.n(), k_total = d.k();
  std::vector<T> col(static_cast<std::size_t>(k_total) * kTileN);
  for (std::int64_t n0 = 0; n0 < n_total; n0 += kTileN) {
    const int nt = static_cast<int>(std::min<std::int64_t>(kTileN, n_total - n0));
    im2col_tile(x, d, n0, nt, col.data());
#pragma omp parallel for schedule(static)
    for (int m = 0; m < d.cout; ++m) {
      const T* dyr = dy + static_cast<std::int64_t>(m) * n_total + n0;
      for (std::int64_t k = 0; k < k_total; ++k) {
        const T* c = col.data() + k * nt;
        T acc = T(0);
#pragma omp simd reduction(+ : acc)
        for (int j = 0; j < nt; ++j) acc += dyr[j] * c[j];
        dw[m * k_total + k] += acc;
      }
    }
  }
}

// dX for stride 1 is a full correlation of dY with the flipped kernel.
template <typename T>
void conv2d_backward_input_s1(const T* dy, const T* w, T* dx_accum, const ConvDims& d) {
  std::vector<T> wf(static_cast<std::size_t>(d.cin) * d.cout * d.kh * d.kw);
  for (int co = 0; co < d.cout; ++co)
    for (int ci = 0; ci < d.cin; ++ci)
      for (int ky = 0; ky < d.kh; ++ky)
        for (int kx = 0; kx < d.kw; ++kx)
          wf[((static_cast<std::int64_t>(ci) * d.cout + co) * d.kh + (d.kh - 1 - ky)) * d.kw +
             (d.kw - 1 - kx)] = w[((static_cast<std::int64_t>(co) * d.cin + ci) * d.kh + ky) * d.kw + kx];
  ConvDims bd;
  bd.cin = d.cout;
  bd.h = d.ho;
  bd.w = d.wo;
  bd.cout = d.cin;
  bd.kh = d.kh;
  bd.kw = d.kw;
  bd.stride = 1;
  bd.pad_h = d.kh - 1 - d.pad_h;
  bd.pad_w = d.kw - 1 - d.pad_w;
  bd.ho = d.h;
  bd.wo = d.w;
  std::vector<T> tmp(static_cast<std::size_t>(d.cin) * d.h * d.w);
  conv2d_forward(dy, wf.data(), static_cast<const T*>(nullptr), tmp.data(), bd);
  const std::int64_t n = static_cast<std::int64_t>(d.cin) * d.h * d.w;
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) dx_accum[i] += tmp[i];
}

// Reference path for strided convolutions; only exercised by tests.
template <typename T>
void conv2d_backward_input_generic(const T* dy, const T* w, T* dx_accum, const ConvDims& d) {
  for (int co = 0; co < d.cout; ++co)
    for (int oy = 0; oy < d.ho; ++oy)
      for (int ox = 0; ox < d.wo; ++ox) {
        const T g = dy[(static_cast<std::int64_t>(co) * d.ho + oy) * d.wo + ox];
        if (g == T(0)) continue;
        for (int ci = 0; ci < d.cin; ++ci)
          for (int ky = 0; ky < d.kh; ++ky)
            for (int kx = 0; kx < d.kw; ++kx) {
              const int iy = oy * d.stride + ky - d.pad_h;
              const int ix = ox * d.stride + kx - d.pad_w;
              if (iy < 0 || iy >= d.h || ix < 0 || ix >= d.w) continue;
              dx_accum[(static_cast<std::int64_t>(ci) * d.h + iy) * d.w + ix] +=
                  g * w[((static_cast<std::int64_t>(co) * d.cin + ci) * d.kh + ky) * d.kw + kx];
            }
      }
}

}  // namespace

template <typename T>
Tensor<T>& conv2d(Tape<T>& tape, Tensor<T>& x, Tensor<T>& w, Tensor<T>& b, int stride, int pad_h,
                  int pad_w) {
  const ConvDims d = conv_dims(x, w, stride, pad_h, pad_w);
  if (b.numel() != 0 && b.numel() != d.cout)
    throw std::invalid_argument("conv2d: bias length mismatches output channels");
  Tensor<T>& y = tape.make({d.cout, d.ho, d.wo});
  conv2d_forward(x.p(), w.p(), b.numel() ? b.p() : nullptr, y.p(), d);
  tape.record([&x, &w, &b, &y, d]() {
    const std::int64_t n_total = d.n();
    if (b.has_grad()) {
#pragma omp parallel for schedule(static)
      for (int m = 0; m < d.cout; ++m) {
        const T* dyr = y.g() + static_cast<std::int64_t>(m) * n_total;
        T acc = T(0);
        for (std::int64_t j = 0; j < n_total; ++j) acc += dyr[j];
        b.grad[static_cast<std::size_t>(m)] += acc;
      }
    }
    if (w.has_grad()) conv2d_backward_weights(x.p(), y.g(), w.g(), d);
    if (x.has_grad()) {
      if (d.stride == 1)
        conv2d_backward_input_s1(y.g(), w.p(), x.g(), d);
      else
        conv2d_backward_input_generic(y.g(), w.p(), x.g(), d);
    }
  });
  return y;
}

template <typename T>
Tensor<T>& relu(Tape<T>& tape, Tensor<T>& x) {
  Tensor<T>& y = tape.make(x.shape);
  const std::int64_t n = x.numel();
  const T* xp = x.p();
  T* yp = y.p();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) yp[i] = xp[i] > T(0) ? xp[i] : T(0);
  tape.record([&x, &y, n]() {
    if (!x.has_grad()) return;
    const T* xp2 = x.p();
    const T* gy = y.g();
    T* gx = x.g();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i)
      if (xp2[i] > T(0)) gx[i] += gy[i];
  });
  return y;
}

template <typename T>
Tensor<T>& maxpool2x2(Tape<T>& tape, Tensor<T>& x) {
  if (x.ndim() != 3 || x.dim(1) % 2 || x.dim(2) % 2)
    throw std::invalid_argument("maxpool2x2: spatial dims must be even, got " + x.shape_str());
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int ho = h / 2, wo = w / 2;
  Tensor<T>& y = tape.make({c, ho, wo});
  auto arg = std::make_shared<std::vector<std::int32_t>>(static_cast<std::size_t>(c) * ho * wo);
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < c; ++ci) {
    const T* xc = x.p() + static_cast<std::int64_t>(ci) * h * w;
    T* yc = y.p() + static_cast<std::int64_t>(ci) * ho * wo;
    std::int32_t* ac = arg->data() + static_cast<std::int64_t>(ci) * ho * wo;
    for (int i = 0; i < ho; ++i)
      for (int j = 0; j < wo; ++j) {
        const int base = 2 * i * w + 2 * j;
        int best = base;
        T bv = xc[base];
        const int cands[3] = {base + 1, base + w, base + w + 1};
        for (int cd : cands)
          if (xc[cd] > bv) {
            bv = xc[cd];
            best = cd;
          }
        yc[i * wo + j] = bv;
        ac[i * wo + j] = best;
      }
  }
  tape.record([&x, &y, arg, c, h, w, ho, wo]() {
    if (!x.has_grad()) return;
#pragma omp parallel for schedule(static)
    for (int ci = 0; ci < c; ++ci) {
      T* gx = x.g() + static_cast<std::int64_t>(ci) * h * w;
      const T* gy = y.g() + static_cast<std::int64_t>(ci) * ho * wo;
      const std::int32_t* ac = arg->data() + static_cast<std::int64_t>(ci) * ho * wo;
      for (int p = 0; p < ho * wo; ++p) gx[ac[p]] += gy[p];
    }
  });
  return y;
}

namespace {

struct LerpAxis {
  std::vector<int> i0, i1;
  std::vector<double> f;
};

LerpAxis lerp_axis_2x(int src) {
  LerpAxis a;
  const int dst = src * 2;
  a.i0.resize(dst);
  a.i1.resize(dst);
  a.f.resize(dst);
  for (int d = 0; d < dst; ++d) {
    const double s = (d + 0.5) * 0.5 - 0.5;
    const int base = static_cast<int>(std::floor(s));
    a.f[d] = s - base;
    a.i0[d] = std::clamp(base, 0, src - 1);
    a.i1[d] = std::clamp(base + 1, 0, src - 1);
  }
  return a;
}

}  // namespace

template <typename T>
Tensor<T>& upsample2x_bilinear(Tape<T>& tape, Tensor<T>& x) {
  if (x.ndim() != 3) throw std::invalid_argument("upsample2x: expected (C,H,W)");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<T>& y = tape.make({c, h * 2, w * 2});
  auto ay = std::make_shared<LerpAxis>(lerp_axis_2x(h));
  auto ax = std::make_shared<LerpAxis>(lerp_axis_2x(w));
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < c; ++ci) {
    const T* xc = x.p() + static_cast<std::int64_t>(ci) * h * w;
    T* yc = y.p() + static_cast<std::int64_t>(ci) * 4 * h * w;
    for (int oy = 0; oy < 2 * h; ++oy) {
      const T fy = static_cast<T>(ay->f[oy]);
      const T* r0 = xc + ay->i0[oy] * w;
      const T* r1 = xc + ay->i1[oy] * w;
      for (int ox = 0; ox < 2 * w; ++ox) {
        const T fx = static_cast<T>(ax->f[ox]);
        const T v0 = r0[ax->i0[ox]] + fx * (r0[ax->i1[ox]] - r0[ax->i0[ox]]);
        const T v1 = r1[ax->i0[ox]] + fx * (r1[ax->i1[ox]] - r1[ax->i0[ox]]);
        yc[oy * 2 * w + ox] = v0 + fy * (v1 - v0);
      }
    }
  }
  tape.record([&x, &y, ay, ax, c, h, w]() {
    if (!x.has_grad()) return;
#pragma omp parallel for schedule(static)
    for (int ci = 0; ci < c; ++ci) {
      T* gx = x.g() + static_cast<std::int64_t>(ci) * h * w;
      const T* gy = y.g() + static_cast<std::int64_t>(ci) * 4 * h * w;
      for (int oy = 0; oy < 2 * h; ++oy) {
        const T fy = static_cast<T>(ay->f[oy]);
        for (int ox = 0; ox < 2 * w; ++ox) {
          const T fx = static_cast<T>(ax->f[ox]);
          const T g = gy[oy * 2 * w + ox];
          gx[ay->i0[oy] * w + ax->i0[ox]] += g * (T(1) - fy) * (T(1) - fx);
          gx[ay->i0[oy] * w + ax->i1[ox]] += g * (T(1) - fy) * fx;
          gx[ay->i1[oy] * w + ax->i0[ox]] += g * fy * (T(1) - fx);
          gx[ay->i1[oy] * w + ax->i1[ox]] += g * fy * fx;
        }
      }
    }
  });
  return y;
}

template <typename T>
Tensor<T>& add(Tape<T>& tape, Tensor<T>& a, Tensor<T>& b) {
  if (!a.same_shape(b))
    throw std::invalid_argument("add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor<T>& y = tape.make(a.shape);
  const std::int64_t n = a.numel();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) y.data[i] = a.data[i] + b.data[i];
  tape.record([&a, &b, &y, n]() {
    if (a.has_grad()) {
#pragma omp parallel for schedule(static)
      for (std::int64_t i = 0; i < n; ++i) a.grad[i] += y.grad[i];
    }
    if (b.has_grad()) {
#pragma omp parallel for schedule(static)
      for (std::int64_t i = 0; i < n; ++i) b.grad[i] += y.grad[i];
    }
  });
  return y;
}

template <typename T>
Tensor<T>& softmax2_channel1(Tape<T>& tape, Tensor<T>& logits) {
  if (logits.ndim() != 3 || logits.dim(0) != 2)
    throw std::invalid_argument("softmax2_channel1: expected (2,H,W) logits");
  const int h = logits.dim(1), w = logits.dim(2);
  const std::int64_t n = static_cast<std::int64_t>(h) * w;
  Tensor<T>& a = tape.make({1, h, w});
  const T* l0 = logits.p();
  const T* l1 = logits.p() + n;
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    const T dlt = l1[i] - l0[i];
    a.data[i] = dlt >= T(0) ? T(1) / (T(1) + std::exp(-dlt))
                            : std::exp(dlt) / (T(1) + std::exp(dlt));
  }
  tape.record([&logits, &a, n]() {
    if (!logits.has_grad()) return;
    T* g0 = logits.g();
    T* g1 = logits.g() + n;
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
      const T s = a.grad[i] * a.data[i] * (T(1) - a.data[i]);
      g1[i] += s;
      g0[i] -= s;
    }
  });
  return a;
}

template <typename T>
Tensor<T>& mul_one_plus(Tape<T>& tape, Tensor<T>& x, Tensor<T>& a) {
  if (x.ndim() != 3 || a.ndim() != 3 || a.dim(0) != 1 || a.dim(1) != x.dim(1) ||
      a.dim(2) != x.dim(2))
    throw std::invalid_argument("mul_one_plus: attention map must be (1,H,W) matching input");
  const int c = x.dim(0);
  const std::int64_t n = static_cast<std::int64_t>(x.dim(1)) * x.dim(2);
  Tensor<T>& y = tape.make(x.shape);
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < c; ++ci) {
    const T* xc = x.p() + ci * n;
    T* yc = y.p() + ci * n;
    for (std::int64_t i = 0; i < n; ++i) yc[i] = xc[i] * (T(1) + a.data[i]);
  }
  tape.record([&x, &a, &y, c, n]() {
    if (x.has_grad()) {
#pragma omp parallel for schedule(static)
      for (int ci = 0; ci < c; ++ci) {
        T* gx = x.g() + ci * n;
        const T* gy = y.g() + ci * n;
        for (std::int64_t i = 0; i < n; ++i) gx[i] += gy[i] * (T(1) + a.data[i]);
      }
    }
    if (a.has_grad()) {
      for (int ci = 0; ci < c; ++ci) {
        const T* xc = x.p() + ci * n;
        const T* gy = y.g() + ci * n;
        for (std::int64_t i = 0; i < n; ++i) a.grad[i] += gy[i] * xc[i];
      }
    }
  });
  return y;
}

template <typename T>
Tensor<T> softmax_chw_to_hwc(const Tensor<T>& logits) {
  if (logits.ndim() != 3) throw std::invalid_argument("softmax: expected (C,H,W)");
  const int c = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  const std::int64_t n = static_cast<std::int64_t>(h) * w;
  Tensor<T> out({h, w, c});
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < n; ++p) {
    T m = logits.data[p];
    for (int ci = 1; ci < c; ++ci) m = std::max(m, logits.data[ci * n + p]);
    T z = T(0);
    for (int ci = 0; ci < c; ++ci) {
      const T e = std::exp(logits.data[ci * n + p] - m);
      out.data[p * c + ci] = e;
      z += e;
    }
    for (int ci = 0; ci < c; ++ci) out.data[p * c + ci] /= z;
  }
  return out;
}

namespace {

// Bilinear read with zero outside the image, plus the partials needed for
// offset gradients.
template <typename T>
struct BilinearTap {
  int y0, x0;
  T fy, fx;
  bool in(int y, int x, int h, int w) const { return y >= 0 && y < h && x >= 0 && x < w; }
};

template <typename T>
BilinearTap<T> make_tap(T sy, T sx) {
  BilinearTap<T> t;
  const T fy = std::floor(sy);
  const T fx = std::floor(sx);
  t.y0 = static_cast<int>(fy);
  t.x0 = static_cast<int>(fx);
  t.fy = sy - fy;
  t.fx = sx - fx;
  return t;
}

template <typename T>
T sample_tap(const T* img, int h, int w, const BilinearTap<T>& t) {
  const T v00 = t.in(t.y0, t.x0, h, w) ? img[t.y0 * w + t.x0] : T(0);
  const T v01 = t.in(t.y0, t.x0 + 1, h, w) ? img[t.y0 * w + t.x0 + 1] : T(0);
  const T v10 = t.in(t.y0 + 1, t.x0, h, w) ? img[(t.y0 + 1) * w + t.x0] : T(0);
  const T v11 = t.in(t.y0 + 1, t.x0 + 1, h, w) ? img[(t.y0 + 1) * w + t.x0 + 1] : T(0);
  const T top = v00 + t.fx * (v01 - v00);
  const T bot = v10 + t.fx * (v11 - v10);
  return top + t.fy * (bot - top);
}

}  // namespace

template <typename T>
Tensor<T>& deform_conv3x3(Tape<T>& tape, Tensor<T>& x, Tensor<T>& w, Tensor<T>& b,
                          Tensor<T>& offsets) {
  if (x.ndim() != 3) throw std::invalid_argument("deform_conv3x3: expected (C,H,W) input");
  const int cin = x.dim(0), h = x.dim(1), w_ = x.dim(2);
  if (w.ndim() != 4 || w.dim(1) != cin || w.dim(2) != 3 || w.dim(3) != 3)
    throw std::invalid_argument("deform_conv3x3: kernel must be (Cout,Cin,3,3)");
  if (offsets.ndim() != 3 || offsets.dim(0) != 18 || offsets.dim(1) != h || offsets.dim(2) != w_)
    throw std::invalid_argument("deform_conv3x3: offsets must be (18,H,W) at input resolution");
  const int cout = w.dim(0);
  const std::int64_t n = static_cast<std::int64_t>(h) * w_;
  const std::int64_t k_total = static_cast<std::int64_t>(cin) * 9;

  // The sampled-value matrix doubles as the im2col block for the GEMM and is
  // kept for the backward pass.
  Tensor<T>& col = tape.make_nograd({static_cast<int>(k_total), static_cast<int>(n)});
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < n; ++p) {
    const int oy = static_cast<int>(p / w_);
    const int ox = static_cast<int>(p % w_);
    for (int t = 0; t < 9; ++t) {
      const T sy = static_cast<T>(oy + t / 3 - 1) + offsets.data[(2 * t) * n + p];
      const T sx = static_cast<T>(ox + t % 3 - 1) + offsets.data[(2 * t + 1) * n + p];
      const auto tap = make_tap(sy, sx);
      for (int ci = 0; ci < cin; ++ci)
        col.data[(static_cast<std::int64_t>(ci) * 9 + t) * n + p] =
            sample_tap(x.p() + static_cast<std::int64_t>(ci) * n, h, w_, tap);
    }
  }

  Tensor<T>& y = tape.make({cout, h, w_});
  const std::int64_t ntiles = (n + kTileN - 1) / kTileN;
#pragma omp parallel for schedule(static)
  for (std::int64_t t = 0; t < ntiles; ++t) {
    const std::int64_t n0 = t * kTileN;
    const int nt = static_cast<int>(std::min<std::int64_t>(kTileN, n - n0));
    T* ctile = scratch<T>(1, static_cast<std::size_t>(k_total) * kTileN);
    for (std::int64_t k = 0; k < k_total; ++k)
      std::memcpy(ctile + k * nt, col.p() + k * n + n0, sizeof(T) * nt);
    gemm_tile(w.p(), ctile, b.numel() ? b.p() : nullptr, y.p(), cout, k_total, n, n0, nt);
  }

  tape.record([&x, &w, &b, &offsets, &col, &y, cin, cout, h, w_, n, k_total]() {
    if (b.has_grad()) {
#pragma omp parallel for schedule(static)
      for (int m = 0; m < cout; ++m) {
        T acc = T(0);
        for (std::int64_t j = 0; j < n; ++j) acc += y.grad[m * n + j];
        b.grad[static_cast<std::size_t>(m)] += acc;
      }
    }
    if (w.has_grad()) {
#pragma omp parallel for schedule(static)
      for (int m = 0; m < cout; ++m)
        for (std::int64_t k = 0; k < k_total; ++k) {
          const T* dyr = y.g() + m * n;
          const T* cr = col.p() + k * n;
          T acc = T(0);
#pragma omp simd reduction(+ : acc)
          for (std::int64_t j = 0; j < n; ++j) acc += dyr[j] * cr[j];
          w.grad[m * k_total + k] += acc;
        }
    }
    const bool need_x = x.has_grad(), need_off = offsets.has_grad();
    if (!need_x && !need_off) return;
    std::vector<T> dcol(static_cast<std::size_t>(k_total) * n, T(0));
#pragma omp parallel for schedule(static)
    for (std::int64_t k = 0; k < k_total; ++k) {
      T* dr = dcol.data() + k * n;
      for (int m = 0; m < cout; ++m) {
        const T a = w.data[m * k_total + k];
        const T* dyr = y.g() + m * n;
#pragma omp simd
        for (std::int64_t j = 0; j < n; ++j) dr[j] += a * dyr[j];
      }
    }
    // Scatter through the bilinear taps. Taps of different output pixels
    // overlap in the input, so this stays single threaded.
    for (std::int64_t p = 0; p < n; ++p) {
      const int oy = static_cast<int>(p / w_);
      const int ox = static_cast<int>(p % w_);
      for (int t = 0; t < 9; ++t) {
        const T sy = static_cast<T>(oy + t / 3 - 1) + offsets.data[(2 * t) * n + p];
        const T sx = static_cast<T>(ox + t % 3 - 1) + offsets.data[(2 * t + 1) * n + p];
        const auto tap = make_tap(sy, sx);
        T dsy = T(0), dsx = T(0);
        for (int ci = 0; ci < cin; ++ci) {
          const T g = dcol[(static_cast<std::int64_t>(ci) * 9 + t) * n + p];
          if (g == T(0)) continue;
          const T* img = x.p() + static_cast<std::int64_t>(ci) * n;
          T* gimg = need_x ? x.g() + static_cast<std::int64_t>(ci) * n : nullptr;
          const bool i00 = tap.in(tap.y0, tap.x0, h, w_);
          const bool i01 = tap.in(tap.y0, tap.x0 + 1, h, w_);
          const bool i10 = tap.in(tap.y0 + 1, tap.x0, h, w_);
          const bool i11 = tap.in(tap.y0 + 1, tap.x0 + 1, h, w_);
          const T v00 = i00 ? img[tap.y0 * w_ + tap.x0] : T(0);
          const T v01 = i01 ? img[tap.y0 * w_ + tap.x0 + 1] : T(0);
          const T v10 = i10 ? img[(tap.y0 + 1) * w_ + tap.x0] : T(0);
          const T v11 = i11 ? img[(tap.y0 + 1) * w_ + tap.x0 + 1] : T(0);
          if (need_x) {
            if (i00) gimg[tap.y0 * w_ + tap.x0] += g * (T(1) - tap.fy) * (T(1) - tap.fx);
            if (i01) gimg[tap.y0 * w_ + tap.x0 + 1] += g * (T(1) - tap.fy) * tap.fx;
            if (i10) gimg[(tap.y0 + 1) * w_ + tap.x0] += g * tap.fy * (T(1) - tap.fx);
            if (i11) gimg[(tap.y0 + 1) * w_ + tap.x0 + 1] += g * tap.fy * tap.fx;
          }
          dsy += g * ((T(1) - tap.fx) * (v10 - v00) + tap.fx * (v11 - v01));
          dsx += g * ((T(1) - tap.fy) * (v01 - v00) + tap.fy * (v11 - v10));
        }
        if (need_off) {
          offsets.grad[(2 * t) * n + p] += dsy;
          offsets.grad[(2 * t + 1) * n + p] += dsx;
        }
      }
    }
  });
  return y;
}

#define CAFCN_INSTANTIATE(T)                                                                  \
  template Tensor<T>& conv2d<T>(Tape<T>&, Tensor<T>&, Tensor<T>&, Tensor<T>&, int, int, int); \
  template Tensor<T>& relu<T>(Tape<T>&, Tensor<T>&);                                          \
  template Tensor<T>& maxpool2x2<T>(Tape<T>&, Tensor<T>&);                                    \
  template Tensor<T>& upsample2x_bilinear<T>(Tape<T>&, Tensor<T>&);                           \
  template Tensor<T>& add<T>(Tape<T>&, Tensor<T>&, Tensor<T>&);                               \
  template Tensor<T>& softmax2_channel1<T>(Tape<T>&, Tensor<T>&);                             \
  template Tensor<T>& mul_one_plus<T>(Tape<T>&, Tensor<T>&, Tensor<T>&);                      \
  template Tensor<T> softmax_chw_to_hwc<T>(const Tensor<T>&);                                 \
  template Tensor<T>& deform_conv3x3<T>(Tape<T>&, Tensor<T>&, Tensor<T>&, Tensor<T>&, Tensor<T>&);

CAFCN_INSTANTIATE(float)
CAFCN_INSTANTIATE(double)

#undef CAFCN_INSTANTIATE

}  // namespace cafcn
