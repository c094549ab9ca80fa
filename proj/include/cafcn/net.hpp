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
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cafcn/geometry.hpp"
#include "cafcn/ops.hpp"
#include "cafcn/tape.hpp"
#include "cafcn/tensor.hpp"

namespace cafcn {

// Architecture knobs. The topology is fixed (five stages, pooling between
// stages 1-4 only, pyramid fusion down to half resolution); the widths and
// which stages get attention or deformable sampling are configurable.
struct NetConfig {
  std::vector<int> stage_channels = {32, 64, 128, 128, 128};
  std::vector<int> stage_convs = {1, 2, 2};  // plain 3x3 convs in stages 1-3
  int fuse_channels = 64;
  int num_classes = kNumClasses;
  std::vector<int> attention_stages = {2, 3, 4, 5};
  std::vector<int> deform_stages = {4, 5};

  bool has_attention(int stage) const;
  bool has_deform(int stage) const;
  // Width of the attention head's hidden layer for a stage of c channels.
  int attn_hidden(int stage) const;

  void validate() const;

  // Parses a JSON object; absent keys keep their defaults.
  static NetConfig from_json_text(const std::string& text);
  static NetConfig from_json_file(const std::string& path);
  std::string to_json_text() const;
};

template <typename T>
struct ConvParam {
  Tensor<T> w;
  Tensor<T> b;
};

template <typename T>
struct StageParam {
  std::vector<ConvParam<T>> convs;  // stages 4-5: [0] is the 3x3, [1] the 3x1
  ConvParam<T> offset;              // present only on deformable stages
  ConvParam<T> attn_hidden;         // present only on attention stages
  ConvParam<T> attn_head;
};

template <typename T>
struct Model {
  NetConfig cfg;
  std::array<StageParam<T>, 5> stages;
  std::array<ConvParam<T>, 4> lateral;  // stages 2-5 -> fuse_channels
  std::array<ConvParam<T>, 3> smooth;   // merge points at stages 4, 3, 2
  ConvParam<T> head;                    // 1x1 to num_classes
};

// Calls fn(name, tensor) for every parameter in a fixed canonical order.
// The order defines the weight-file layout and the optimizer state layout.
template <typename T, typename Fn>
void visit_params(Model<T>& m, Fn&& fn) {
  auto conv = [&](const std::string& name, ConvParam<T>& cp) {
    fn(name + ".w", cp.w);
    fn(name + ".b", cp.b);
  };
  for (int s = 1; s <= 5; ++s) {
    StageParam<T>& sp = m.stages[static_cast<std::size_t>(s - 1)];
    for (std::size_t i = 0; i < sp.convs.size(); ++i)
      conv("stage" + std::to_string(s) + ".conv" + std::to_string(i + 1), sp.convs[i]);
    if (sp.offset.w.numel()) conv("stage" + std::to_string(s) + ".offset", sp.offset);
    if (sp.attn_hidden.w.numel()) {
      conv("stage" + std::to_string(s) + ".attn.conv1", sp.attn_hidden);
      conv("stage" + std::to_string(s) + ".attn.conv2", sp.attn_head);
    }
  }
  for (int s = 2; s <= 5; ++s)
    conv("fuse.lateral" + std::to_string(s), m.lateral[static_cast<std::size_t>(s - 2)]);
  for (int s = 2; s <= 4; ++s)
    conv("fuse.smooth" + std::to_string(s), m.smooth[static_cast<std::size_t>(s - 2)]);
  conv("head", m.head);
}

// Fan-in-scaled uniform init for convs; offset heads and attention output
// heads start at zero so initial offsets are 0 and initial attention is 0.5.
template <typename T>
Model<T> init_weights(const NetConfig& cfg, std::uint64_t seed);

// One full pass. Holds the autodiff tape alive so the caller can seed
// gradients on `logits` and run trace.tape.backward().
template <typename T>
struct ForwardTrace {
  Tape<T> tape;
  Tensor<T>* logits = nullptr;              // (C, H/2, W/2)
  Tensor<T> prob_map;                       // (H/2, W/2, C), softmax applied
  std::map<int, Tensor<T>*> attn_logits;    // stage -> (2, h_s, w_s)
  std::map<int, Tensor<T>*> stage_out;      // stage -> features entering the pyramid
};

// image is (3, H, W) with values in [0, 1]; the mean shift happens inside.
// H and W must be multiples of 8 and at least 16.
template <typename T>
ForwardTrace<T> forward(Model<T>& m, const Tensor<T>& image, bool recording);

// Weight container: "CAFW" magic, version, JSON name/shape directory, raw
// little-endian f32 payload. Trailing bytes after the payload are ignored so
// checkpoints can append optimizer state.
template <typename T>
void save_weights(Model<T>& m, const std::string& path);
template <typename T>
void load_weights(Model<T>& m, const std::string& path);

// The architecture recorded in a weight file's header. Throws when the
// file predates the embedded configuration.
NetConfig load_weights_config(const std::string& path);

// Byte offset of the first byte after the weight payload (for checkpoint
// readers that append extra sections).
std::uint64_t weight_payload_end(const std::string& path);

}  // namespace cafcn
