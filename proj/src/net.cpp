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

#include "cafcn/net.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cafcn/rng.hpp"
#include "json.hpp"

namespace cafcn {

using nlohmann::json;

bool NetConfig::has_attention(int stage) const {
  return std::find(attention_stages.begin(), attention_stages.end(), stage) !=
         attention_stages.end();
}

bool NetConfig::has_deform(int stage) const {
  return std::find(deform_stages.begin(), deform_stages.end(), stage) != deform_stages.end();
}

int NetConfig::attn_hidden(int stage) const {
  return std::max(8, stage_channels.at(static_cast<std::size_t>(stage - 1)) / 4);
}

void NetConfig::validate() const {
  if (stage_channels.size() != 5) throw std::invalid_argument("config: need 5 stage channel widths");
  for (int c : stage_channels)
    if (c < 1) throw std::invalid_argument("config: stage channels must be positive");
  if (stage_convs.size() != 3) throw std::invalid_argument("config: need conv counts for stages 1-3");
  for (int n : stage_convs)
    if (n < 1) throw std::invalid_argument("config: conv counts must be positive");
  if (fuse_channels < 1) throw std::invalid_argument("config: fuse_channels must be positive");
  if (num_classes < 2) throw std::invalid_argument("config: need at least 2 classes");
  for (int s : attention_stages)
    if (s < 2 || s > 5) throw std::invalid_argument("config: attention stages must be in 2..5");
  for (int s : deform_stages)
    if (s != 4 && s != 5) throw std::invalid_argument("config: deformable stages must be 4 or 5");
}

namespace {

void read_int_list(const json& j, const char* key, std::vector<int>& out) {
  if (!j.contains(key)) return;
  out = j.at(key).get<std::vector<int>>();
}

}  // namespace

NetConfig NetConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  NetConfig cfg;
  read_int_list(j, "stage_channels", cfg.stage_channels);
  read_int_list(j, "stage_convs", cfg.stage_convs);
  if (j.contains("fuse_channels")) cfg.fuse_channels = j.at("fuse_channels").get<int>();
  if (j.contains("num_classes")) cfg.num_classes = j.at("num_classes").get<int>();
  read_int_list(j, "attention_stages", cfg.attention_stages);
  read_int_list(j, "deform_stages", cfg.deform_stages);
  cfg.validate();
  return cfg;
}

NetConfig NetConfig::from_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return from_json_text(ss.str());
}

std::string NetConfig::to_json_text() const {
  json j = {{"stage_channels", stage_channels},   {"stage_convs", stage_convs},
            {"fuse_channels", fuse_channels},     {"num_classes", num_classes},
            {"attention_stages", attention_stages}, {"deform_stages", deform_stages}};
  return j.dump(2);
}

template <typename T>
Model<T> init_weights(const NetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model<T> m;
  m.cfg = cfg;

  auto make_conv = [](ConvParam<T>& cp, int cout, int cin, int kh, int kw) {
    cp.w = Tensor<T>({cout, cin, kh, kw});
    cp.b = Tensor<T>({cout});
  };

  for (int s = 1; s <= 5; ++s) {
    StageParam<T>& sp = m.stages[static_cast<std::size_t>(s - 1)];
    const int cin = s == 1 ? 3 : cfg.stage_channels[static_cast<std::size_t>(s - 2)];
    const int cout = cfg.stage_channels[static_cast<std::size_t>(s - 1)];
    if (s <= 3) {
      sp.convs.resize(static_cast<std::size_t>(cfg.stage_convs[static_cast<std::size_t>(s - 1)]));
      for (std::size_t i = 0; i < sp.convs.size(); ++i)
        make_conv(sp.convs[i], cout, i == 0 ? cin : cout, 3, 3);
    } else {
      sp.convs.resize(2);
      make_conv(sp.convs[0], cout, cin, 3, 3);
      make_conv(sp.convs[1], cout, cout, 1, 3);  // 3 wide, 1 tall
      if (cfg.has_deform(s)) make_conv(sp.offset, 18, cin, 3, 3);
    }
    if (cfg.has_attention(s)) {
      const int hid = cfg.attn_hidden(s);
      make_conv(sp.attn_hidden, hid, cout, 3, 3);
      make_conv(sp.attn_head, 2, hid, 1, 1);
    }
  }
  for (int s = 2; s <= 5; ++s)
    make_conv(m.lateral[static_cast<std::size_t>(s - 2)], cfg.fuse_channels,
              cfg.stage_channels[static_cast<std::size_t>(s - 1)], 1, 1);
  for (int s = 2; s <= 4; ++s)
    make_conv(m.smooth[static_cast<std::size_t>(s - 2)], cfg.fuse_channels, cfg.fuse_channels, 3, 3);
  make_conv(m.head, cfg.num_classes, cfg.fuse_channels, 1, 1);

  // Offset heads and attention output heads stay zero: offsets start at 0
  // and the attention gate starts flat at 0.5. Everything else draws from a
  // fan-in-scaled uniform, one substream per parameter name so the values do
  // not depend on visit order.
  visit_params(m, [&](const std::string& name, Tensor<T>& t) {
    const bool zero_init = name.find(".offset.") != std::string::npos ||
                           name.find(".attn.conv2.") != std::string::npos;
    if (zero_init || t.ndim() != 4) return;
    const double fan_in = static_cast<double>(t.dim(1)) * t.dim(2) * t.dim(3);
    const double lim = std::sqrt(6.0 / fan_in);
    Rng rng = Rng::stream(seed, {"init", name.c_str()});
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(-lim, lim));
  });
  return m;
}

template <typename T>
ForwardTrace<T> forward(Model<T>& m, const Tensor<T>& image, bool recording) {
  if (image.ndim() != 3 || image.dim(0) != 3)
    throw std::invalid_argument("forward: expected a (3,H,W) image, got " + image.shape_str());
  const int h = image.dim(1), w = image.dim(2);
  if (h % 8 || w % 8 || h < 16 || w < 16)
    throw std::invalid_argument("forward: dims must be multiples of 8 and at least 16, got " +
                                image.shape_str());

  ForwardTrace<T> tr;
  tr.tape = Tape<T>(recording);
  Tape<T>& tape = tr.tape;

  Tensor<T>& x0 = tape.make_nograd(image.shape);
  for (std::size_t i = 0; i < x0.data.size(); ++i) x0.data[i] = image.data[i] - T(0.5);

  Tensor<T>* cur = &x0;
  for (int s = 1; s <= 5; ++s) {
    if (s >= 2 && s <= 4) cur = &maxpool2x2(tape, *cur);
    StageParam<T>& sp = m.stages[static_cast<std::size_t>(s - 1)];
    if (s <= 3) {
      for (auto& cp : sp.convs) cur = &relu(tape, conv2d(tape, *cur, cp.w, cp.b, 1, 1, 1));
    } else {
      if (m.cfg.has_deform(s)) {
        Tensor<T>& off = conv2d(tape, *cur, sp.offset.w, sp.offset.b, 1, 1, 1);
        cur = &relu(tape, deform_conv3x3(tape, *cur, sp.convs[0].w, sp.convs[0].b, off));
      } else {
        cur = &relu(tape, conv2d(tape, *cur, sp.convs[0].w, sp.convs[0].b, 1, 1, 1));
      }
      cur = &relu(tape, conv2d(tape, *cur, sp.convs[1].w, sp.convs[1].b, 1, 0, 1));
    }
    if (m.cfg.has_attention(s)) {
      Tensor<T>& hid = relu(tape, conv2d(tape, *cur, sp.attn_hidden.w, sp.attn_hidden.b, 1, 1, 1));
      Tensor<T>& alog = conv2d(tape, hid, sp.attn_head.w, sp.attn_head.b);
      Tensor<T>& a = softmax2_channel1(tape, alog);
      cur = &mul_one_plus(tape, *cur, a);
      tr.attn_logits[s] = &alog;
    }
    tr.stage_out[s] = cur;
  }

  auto lateral_of = [&](int s) -> Tensor<T>& {
    ConvParam<T>& cp = m.lateral[static_cast<std::size_t>(s - 2)];
    return conv2d(tape, *tr.stage_out[s], cp.w, cp.b);
  };
  Tensor<T>* top = &lateral_of(5);
  for (int s = 4; s >= 2; --s) {
    Tensor<T>& lat = lateral_of(s);
    if (top->dim(1) != lat.dim(1)) top = &upsample2x_bilinear(tape, *top);
    Tensor<T>& merged = add(tape, lat, *top);
    ConvParam<T>& sm = m.smooth[static_cast<std::size_t>(s - 2)];
    top = &relu(tape, conv2d(tape, merged, sm.w, sm.b, 1, 1, 1));
  }
  tr.logits = &conv2d(tape, *top, m.head.w, m.head.b);
  tr.prob_map = softmax_chw_to_hwc(*tr.logits);
  return tr;
}

namespace {

void put_u32le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

constexpr char kMagic[4] = {'C', 'A', 'F', 'W'};
constexpr std::uint32_t kVersion = 1;

struct WeightDirectory {
  json header;
  std::size_t payload_offset = 0;
};

WeightDirectory read_directory(const std::string& bytes, const std::string& path) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw std::runtime_error(path + ": not a CAFW weight file");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t version = get_u32le(p + 4);
  if (version != kVersion)
    throw std::runtime_error(path + ": unsupported weight file version " + std::to_string(version));
  const std::uint32_t hlen = get_u32le(p + 8);
  if (bytes.size() < 12 + static_cast<std::size_t>(hlen))
    throw std::runtime_error(path + ": truncated weight file header");
  WeightDirectory dir;
  try {
    dir.header = json::parse(bytes.substr(12, hlen));
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ": corrupt weight file header: " + e.what());
  }
  if (!dir.header.contains("params") || !dir.header["params"].is_array())
    throw std::runtime_error(path + ": weight file header lacks a params list");
  dir.payload_offset = 12 + hlen;
  return dir;
}

}  // namespace

template <typename T>
void save_weights(Model<T>& m, const std::string& path) {
  json params = json::array();
  std::string payload;
  visit_params(m, [&](const std::string& name, Tensor<T>& t) {
    params.push_back({{"name", name}, {"shape", t.shape}});
    for (T v : t.data)
      put_u32le(payload, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  });
  // The architecture rides along in the header so a weight file can be
  // loaded without knowing the configuration that produced it.
  const std::string header =
      json{{"net", json::parse(m.cfg.to_json_text())}, {"params", params}}.dump();

  std::string bytes;
  bytes.append(kMagic, 4);
  put_u32le(bytes, kVersion);
  put_u32le(bytes, static_cast<std::uint32_t>(header.size()));
  bytes += header;
  bytes += payload;

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("short write to " + path);
}

template <typename T>
void load_weights(Model<T>& m, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open weight file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string bytes = ss.str();
  const WeightDirectory dir = read_directory(bytes, path);

  // Collect the model's parameter list, then walk it against the directory.
  std::vector<std::pair<std::string, Tensor<T>*>> want;
  visit_params(m, [&](const std::string& name, Tensor<T>& t) { want.emplace_back(name, &t); });
  const auto& entries = dir.header["params"];
  if (entries.size() != want.size())
    throw std::runtime_error(path + ": weight file has " + std::to_string(entries.size()) +
                             " parameters, model expects " + std::to_string(want.size()));

  std::size_t off = dir.payload_offset;
  for (std::size_t i = 0; i < want.size(); ++i) {
    const std::string name = entries[i].at("name").get<std::string>();
    const std::vector<int> shape = entries[i].at("shape").get<std::vector<int>>();
    if (name != want[i].first)
      throw std::runtime_error(path + ": parameter " + std::to_string(i) + " is '" + name +
                               "', model expects '" + want[i].first + "'");
    Tensor<T>& t = *want[i].second;
    if (shape != t.shape)
      throw std::runtime_error(path + ": shape mismatch for '" + name + "'");
    const std::size_t need = static_cast<std::size_t>(t.numel()) * 4;
    if (bytes.size() < off + need)
      throw std::runtime_error(path + ": truncated weight file in '" + name + "'");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + off;
    for (std::int64_t k = 0; k < t.numel(); ++k)
      t.data[static_cast<std::size_t>(k)] =
          static_cast<T>(std::bit_cast<float>(get_u32le(p + 4 * k)));
    off += need;
  }
}

NetConfig load_weights_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open weight file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string bytes = ss.str();
  const WeightDirectory dir = read_directory(bytes, path);
  if (!dir.header.contains("net"))
    throw std::runtime_error(path + ": weight file header lacks the architecture");
  return NetConfig::from_json_text(dir.header["net"].dump());
}

std::uint64_t weight_payload_end(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open weight file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string bytes = ss.str();
  const WeightDirectory dir = read_directory(bytes, path);
  std::uint64_t count = 0;
  for (const auto& e : dir.header["params"]) {
    std::uint64_t n = 1;
    for (int d : e.at("shape").get<std::vector<int>>()) n *= static_cast<std::uint64_t>(d);
    count += n;
  }
  return dir.payload_offset + 4 * count;
}

#define CAFCN_INSTANTIATE(T)                                                                    \
  template Model<T> init_weights<T>(const NetConfig&, std::uint64_t);                           \
  template ForwardTrace<T> forward<T>(Model<T>&, const Tensor<T>&, bool);                       \
  template void save_weights<T>(Model<T>&, const std::string&);                                 \
  template void load_weights<T>(Model<T>&, const std::string&);

CAFCN_INSTANTIATE(float)
CAFCN_INSTANTIATE(double)

#undef CAFCN_INSTANTIATE

}  // namespace cafcn
