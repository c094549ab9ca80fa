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

#include "cafcn/tape.hpp"
#include "cafcn/tensor.hpp"

namespace cafcn {

// Feature maps are (C, H, W) row-major. Convolution weights are
// (Cout, Cin, kh, kw); all convolutions cross-correlate, sampling zeros
// outside the padded input. Every op accumulates into the gradients of its
// inputs during backward, so fan-out adds up naturally.

// y = x ⋆ w + b. Kernel must fit the padded input.
template <typename T>
Tensor<T>& conv2d(Tape<T>& tape, Tensor<T>& x, Tensor<T>& w, Tensor<T>& b, int stride = 1,
                  int pad_h = 0, int pad_w = 0);

template <typename T>
Tensor<T>& relu(Tape<T>& tape, Tensor<T>& x);

// 2x2 max pooling with stride 2; spatial dims must be even. Ties route the
// gradient to the first maximal cell in row-major order.
template <typename T>
Tensor<T>& maxpool2x2(Tape<T>& tape, Tensor<T>& x);

// Bilinear 2x upsampling with half-pixel centers and edge clamping.
template <typename T>
Tensor<T>& upsample2x_bilinear(Tape<T>& tape, Tensor<T>& x);

template <typename T>
Tensor<T>& add(Tape<T>& tape, Tensor<T>& a, Tensor<T>& b);

// Two-class channel softmax reduced to its foreground probability:
// a(p) = sigmoid(logits[1](p) - logits[0](p)). logits must have 2 channels.
template <typename T>
Tensor<T>& softmax2_channel1(Tape<T>& tape, Tensor<T>& logits);

// y[c](p) = x[c](p) * (1 + a[0](p)); a is broadcast over channels.
template <typename T>
Tensor<T>& mul_one_plus(Tape<T>& tape, Tensor<T>& x, Tensor<T>& a);

// Per-pixel channel softmax of a (C, H, W) logit map, laid out (H, W, C).
// Inference-only: no gradient flows through this.
template <typename T>
Tensor<T> softmax_chw_to_hwc(const Tensor<T>& logits);

// Deformable 3x3 convolution (stride 1, pad 1). `offsets` holds 18 channels
// at the output resolution: channels (2t, 2t+1) are the (dy, dx) displacement
// of tap t, taps in row-major kernel order. Samples are read bilinearly and
// out-of-bounds reads are zero. Gradients flow to x, w, b and the offsets.
template <typename T>
Tensor<T>& deform_conv3x3(Tape<T>& tape, Tensor<T>& x, Tensor<T>& w, Tensor<T>& b,
                          Tensor<T>& offsets);

}  // namespace cafcn
