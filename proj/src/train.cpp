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

#include "cafcn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "cafcn/geometry.hpp"

namespace cafcn {

template <typename T>
Tensor<T> pixel_weights(const Tensor<int>& y) {
  if (y.ndim() != 2) throw std::invalid_argument("pixel_weights: expected a (h,w) label map");
  const std::int64_t n = y.numel();
  std::int64_t neg = 0;
  for (int v : y.data) neg += v == 0;
  Tensor<T> w(y.shape);
  const bool degenerate = neg == 0 || neg == n;
  const T fg = degenerate ? T(1) : static_cast<T>(static_cast<double>(neg) /
                                                  static_cast<double>(n - neg));
  for (std::int64_t i = 0; i < n; ++i)
    w.data[static_cast<std::size_t>(i)] = y.data[static_cast<std::size_t>(i)] > 0 ? fg : T(1);
  return w;
}

template <typename T>
double prediction_loss(Tensor<T>& logits, const Tensor<int>& y, const Tensor<T>& wmap,
                       bool with_grad) {
  if (logits.ndim() != 3) throw std::invalid_argument("prediction_loss: logits must be (C,h,w)");
  const int c = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  if (c < 2) throw std::invalid_argument("prediction_loss: need at least 2 classes");
  if (y.ndim() != 2 || y.dim(0) != h || y.dim(1) != w)
    throw std::invalid_argument("prediction_loss: label map " + y.shape_str() +
                                " does not match logits " + logits.shape_str());
  if (wmap.shape != y.shape)
    throw std::invalid_argument("prediction_loss: weight map shape mismatch");
  for (T v : logits.data)
    if (!std::isfinite(static_cast<double>(v)))
      throw std::invalid_argument("prediction_loss: non-finite logits");
  if (with_grad && !logits.has_grad())
    throw std::invalid_argument("prediction_loss: gradient requested but none allocated");

  const std::int64_t n = static_cast<std::int64_t>(h) * w;
  const double norm = 1.0 / static_cast<double>(n);
  double loss = 0.0;
  for (std::int64_t p = 0; p < n; ++p) {
    const int t = y.data[static_cast<std::size_t>(p)];
    if (t < 0 || t >= c)
      throw std::invalid_argument("prediction_loss: label " + std::to_string(t) +
                                  " outside [0," + std::to_string(c) + ")");
    double m = static_cast<double>(logits.data[static_cast<std::size_t>(p)]);
    for (int ci = 1; ci < c; ++ci)
      m = std::max(m, static_cast<double>(logits.data[static_cast<std::size_t>(ci * n + p)]));
    double z = 0.0;
    for (int ci = 0; ci < c; ++ci)
      z += std::exp(static_cast<double>(logits.data[static_cast<std::size_t>(ci * n + p)]) - m);
    const double wt = static_cast<double>(wmap.data[static_cast<std::size_t>(p)]);
    const double lt = static_cast<double>(logits.data[static_cast<std::size_t>(t * n + p)]);
    loss += wt * (std::log(z) - (lt - m));
    if (with_grad) {
      for (int ci = 0; ci < c; ++ci) {
        const double sm =
            std::exp(static_cast<double>(logits.data[static_cast<std::size_t>(ci * n + p)]) - m) / z;
        logits.grad[static_cast<std::size_t>(ci * n + p)] +=
            static_cast<T>(norm * wt * (sm - (ci == t ? 1.0 : 0.0)));
      }
    }
  }
  return norm * loss;
}

template <typename T>
double attention_loss(Tensor<T>& logits, const Tensor<int>& gt, bool with_grad) {
  if (logits.ndim() != 3 || logits.dim(0) != 2)
    throw std::invalid_argument("attention_loss: logits must be (2,h,w)");
  const int h = logits.dim(1), w = logits.dim(2);
  if (gt.ndim() != 2 || gt.dim(0) != h || gt.dim(1) != w)
    throw std::invalid_argument("attention_loss: mask " + gt.shape_str() +
                                " does not match logits " + logits.shape_str());
  for (T v : logits.data)
    if (!std::isfinite(static_cast<double>(v)))
      throw std::invalid_argument("attention_loss: non-finite logits");
  if (with_grad && !logits.has_grad())
    throw std::invalid_argument("attention_loss: gradient requested but none allocated");

  const std::int64_t n = static_cast<std::int64_t>(h) * w;
  const double norm = 4.0 / static_cast<double>(n);
  double loss = 0.0;
  for (std::int64_t p = 0; p < n; ++p) {
    const int t = gt.data[static_cast<std::size_t>(p)];
    if (t != 0 && t != 1)
      throw std::invalid_argument("attention_loss: mask values must be 0 or 1");
    const double l0 = static_cast<double>(logits.data[static_cast<std::size_t>(p)]);
    const double l1 = static_cast<double>(logits.data[static_cast<std::size_t>(n + p)]);
    const double m = std::max(l0, l1);
    const double z = std::exp(l0 - m) + std::exp(l1 - m);
    loss += std::log(z) - ((t ? l1 : l0) - m);
    if (with_grad) {
      const double p1 = std::exp(l1 - m) / z;
      logits.grad[static_cast<std::size_t>(p)] += static_cast<T>(norm * ((1.0 - p1) - (t ? 0.0 : 1.0)));
      logits.grad[static_cast<std::size_t>(n + p)] += static_cast<T>(norm * (p1 - (t ? 1.0 : 0.0)));
    }
  }
  return norm * loss;
}

template <typename T>
AdamState<T> make_adam_state(Model<T>& model) {
  AdamState<T> st;
  visit_params(model, [&](const std::string&, Tensor<T>& t) {
    st.m.emplace_back(t.shape);
    st.v.emplace_back(t.shape);
  });
  return st;
}

template <typename T>
double clip_gradients(Model<T>& model, double clip) {
  double sq = 0.0;
  visit_params(model, [&](const std::string&, Tensor<T>& t) {
    for (T g : t.grad) sq += static_cast<double>(g) * static_cast<double>(g);
  });
  const double norm = std::sqrt(sq);
  if (clip > 0.0 && norm > clip) {
    const T scale = static_cast<T>(clip / norm);
    visit_params(model, [&](const std::string&, Tensor<T>& t) {
      for (T& g : t.grad) g *= scale;
    });
  }
  return norm;
}

template <typename T>
void adam_step(Model<T>& model, AdamState<T>& state, const TrainSchedule& sched, double lr) {
  std::vector<std::pair<std::string, Tensor<T>*>> ps;
  visit_params(model, [&](const std::string& n, Tensor<T>& t) { ps.emplace_back(n, &t); });
  if (state.m.size() != ps.size() || state.v.size() != ps.size())
    throw std::invalid_argument("adam_step: optimizer state does not match the model");

  // Validate before touching anything so a refused step leaves the model
  // and the moments untouched.
  for (auto& [name, t] : ps) {
    if (!t->has_grad())
      throw std::invalid_argument("adam_step: parameter '" + name + "' has no gradient");
    for (T g : t->grad)
      if (!std::isfinite(static_cast<double>(g)))
        throw std::runtime_error("adam_step: non-finite gradient in '" + name +
                                 "', step refused");
  }

  state.t += 1;
  const double bc1 = 1.0 - std::pow(sched.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(sched.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Tensor<T>& p = *ps[i].second;
    Tensor<T>& m = state.m[i];
    Tensor<T>& v = state.v[i];
    if (!m.same_shape(p) || !v.same_shape(p))
      throw std::invalid_argument("adam_step: moment shape mismatch for '" + ps[i].first + "'");
    for (std::size_t j = 0; j < p.data.size(); ++j) {
      const double g = static_cast<double>(p.grad[j]);
      const double mj = sched.beta1 * static_cast<double>(m.data[j]) + (1.0 - sched.beta1) * g;
      const double vj = sched.beta2 * static_cast<double>(v.data[j]) + (1.0 - sched.beta2) * g * g;
      m.data[j] = static_cast<T>(mj);
      v.data[j] = static_cast<T>(vj);
      p.data[j] -= static_cast<T>(lr * (mj / bc1) / (std::sqrt(vj / bc2) + sched.eps));
    }
  }
}

namespace {

constexpr char kAdamMagic[4] = {'A', 'D', 'A', 'M'};

void put_u64le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

void put_f32le(std::string& out, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

float get_f32le(const unsigned char* p) {
  std::uint32_t v = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                    (static_cast<std::uint32_t>(p[2]) << 16) |
                    (static_cast<std::uint32_t>(p[3]) << 24);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

}  // namespace

template <typename T>
void save_checkpoint(Model<T>& model, AdamState<T>& state, const std::string& path) {
  save_weights(model, path);
  std::string section;
  section.append(kAdamMagic, 4);
  put_u64le(section, static_cast<std::uint64_t>(state.t));
  for (const auto& bank : {&state.m, &state.v})
    for (const Tensor<T>& t : *bank)
      for (T v : t.data) put_f32le(section, static_cast<float>(v));
  std::ofstream f(path, std::ios::binary | std::ios::app);
  if (!f) throw std::runtime_error("cannot append optimizer state to " + path);
  f.write(section.data(), static_cast<std::streamsize>(section.size()));
  if (!f) throw std::runtime_error("short write to " + path);
}

template <typename T>
void load_checkpoint(Model<T>& model, AdamState<T>& state, const std::string& path) {
  load_weights(model, path);
  state = make_adam_state(model);

  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string bytes = ss.str();
  std::size_t off = static_cast<std::size_t>(weight_payload_end(path));
  if (bytes.size() < off + 12 || std::memcmp(bytes.data() + off, kAdamMagic, 4) != 0)
    throw std::runtime_error(path + ": checkpoint has no optimizer state section");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  state.t = static_cast<std::int64_t>(get_u64le(p + off + 4));
  off += 12;
  for (auto* bank : {&state.m, &state.v})
    for (Tensor<T>& t : *bank) {
      const std::size_t need = t.data.size() * 4;
      if (bytes.size() < off + need)
        throw std::runtime_error(path + ": truncated optimizer state");
      for (std::size_t j = 0; j < t.data.size(); ++j)
        t.data[j] = static_cast<T>(get_f32le(p + off + 4 * j));
      off += need;
    }
}

namespace {

// Map scale of each stage relative to the input image: one pooling before
// stages 2, 3 and 4, none before stage 5.
int stage_scale(int stage) {
  switch (stage) {
    case 1: return 1;
    case 2: return 2;
    case 3: return 4;
    case 4: return 8;
    default: return 8;
  }
}

// Fisher-Yates with our own generator so the order is stable across
// standard library implementations.
void shuffle_indices(std::vector<int>& order, Rng& rng) {
  for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
    std::swap(order[static_cast<std::size_t>(i)],
              order[static_cast<std::size_t>(rng.uniform_int(0, i))]);
  }
}

// Fresh 64-bit seed for a sample's augmentation substream.
std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<Rng::Key> path) {
  return Rng::stream(seed, path).next();
}

}  // namespace

LossReport train(const std::string& dataset_dir, const NetConfig& cfg, const TrainOptions& opt,
                 const std::string& out_dir) {
  namespace fs = std::filesystem;
  using nlohmann::json;

  cfg.validate();
  opt.augment_params.validate();
  if (opt.schedule.epochs < 1 || opt.schedule.batch_size < 1) {
    throw std::invalid_argument("train: epochs and batch size must be positive");
  }

  std::vector<SampleMeta> metas = read_manifest(dataset_dir);
  metas.erase(std::remove_if(metas.begin(), metas.end(),
                             [](const SampleMeta& m) { return m.boxes.empty(); }),
              metas.end());
  if (metas.empty()) {
    throw std::invalid_argument("train: no usable samples in '" + dataset_dir + "'");
  }
  const int n = static_cast<int>(metas.size());

  // Small sets are decoded once up front; large corpora stream from disk
  // so memory stays flat.
  std::vector<Sample> cache;
  if (n <= 64) {
    cache.reserve(static_cast<std::size_t>(n));
    for (const SampleMeta& m : metas) cache.push_back(load_sample(m));
  }
  auto fetch = [&](int idx) {
    return cache.empty() ? load_sample(metas[static_cast<std::size_t>(idx)])
                         : cache[static_cast<std::size_t>(idx)];
  };

  // Without augmentation every crop resizes to the last (largest) target
  // so the view stays deterministic.
  AugmentParams ap = opt.augment_params;
  if (!opt.augment) {
    ap.rotation_deg = 0.0;
    ap.hue = 0.0;
    ap.brightness = 0.0;
    ap.contrast = 0.0;
    ap.blur_max_radius = 0;
    ap.targets = {opt.augment_params.targets.back()};
  }

  fs::create_directories(out_dir);

  Model<float> model = init_weights<float>(cfg, opt.seed);
  AdamState<float> st = make_adam_state(model);
  visit_params(model, [](const std::string&, Tensor<float>& t) { t.ensure_grad(); });

  const int batch = opt.schedule.batch_size;
  const int steps_per_epoch =
      opt.max_steps_per_epoch > 0 ? opt.max_steps_per_epoch : (n + batch - 1) / batch;

  int start_epoch = 1;
  if (!opt.resume.empty()) {
    load_checkpoint(model, st, opt.resume);
    start_epoch = static_cast<int>(st.t / steps_per_epoch) + 1;
  }

  const fs::path metrics_path = fs::path(out_dir) / "metrics.jsonl";
  std::ofstream metrics(metrics_path,
                        opt.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!metrics) throw std::runtime_error("cannot write '" + metrics_path.string() + "'");

  LossReport epoch_avg;
  epoch_avg.alpha = opt.alpha;
  for (int epoch = start_epoch; epoch <= opt.schedule.epochs; ++epoch) {
    const double lr = opt.schedule.lr_for_epoch(epoch);
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng order_rng = Rng::stream(opt.seed, {"order", epoch});
    shuffle_indices(order, order_rng);
    std::size_t cursor = 0;
    int reshuffles = 0;

    LossReport sums;
    sums.alpha = opt.alpha;
    for (int step = 1; step <= steps_per_epoch; ++step) {
      visit_params(model, [](const std::string&, Tensor<float>& t) { t.zero_grad(); });

      LossReport report;
      report.alpha = opt.alpha;
      for (int k = 0; k < batch; ++k) {
        if (cursor >= order.size()) {
          // Epochs longer than one pass keep drawing from fresh shuffles.
          ++reshuffles;
          Rng again = Rng::stream(opt.seed, {"order", epoch, reshuffles});
          shuffle_indices(order, again);
          cursor = 0;
        }
        const int idx = order[cursor++];

        Sample view = perturb_expand_crop(fetch(idx), ExpandMode::kFixed, opt.crop_expand, 0);
        view = augment(view, ap, derive_seed(opt.seed, {"aug", epoch, step, k}));

        const int th = view.image.dim(1), tw = view.image.dim(2);
        std::map<int, std::pair<int, int>> stage_dims;
        for (int sg : cfg.attention_stages) {
          stage_dims[sg] = {th / stage_scale(sg), tw / stage_scale(sg)};
        }
        const LabelBundle labels =
            rasterize_labels(view.boxes, th, tw, {th / 2, tw / 2}, stage_dims);

        ForwardTrace<float> tr = forward(model, view.image, /*recording=*/true);
        const Tensor<float> wmap = pixel_weights<float>(labels.pred_gt);
        report.l_p += prediction_loss(*tr.logits, labels.pred_gt, wmap, /*with_grad=*/true);
        for (const auto& [sg, gt] : labels.attn_gt) {
          report.l_a[sg] += attention_loss(*tr.attn_logits.at(sg), gt, /*with_grad=*/true);
        }

        // The batch loss is the mean of per-image losses and attention
        // terms carry alpha, so the seeded gradients scale accordingly
        // before the reverse pass.
        const float wp = 1.0f / static_cast<float>(batch);
        const float wa = static_cast<float>(opt.alpha) / static_cast<float>(batch);
        for (auto& g : tr.logits->grad) g *= wp;
        for (auto& [sg, al] : tr.attn_logits) {
          (void)sg;
          for (auto& g : al->grad) g *= wa;
        }
        tr.tape.backward();
      }
      report.l_p /= batch;
      for (auto& [sg, v] : report.l_a) {
        (void)sg;
        v /= batch;
      }

      clip_gradients(model, opt.clip_norm);
      adam_step(model, st, opt.schedule, lr);

      sums.l_p += report.l_p;
      for (const auto& [sg, v] : report.l_a) sums.l_a[sg] += v;
      if (opt.log_every > 0 && (step % opt.log_every == 0 || step == steps_per_epoch)) {
        json la = json::array();
        for (const auto& [sg, v] : report.l_a) {
          (void)sg;
          la.push_back(v);
        }
        const json line = {
            {"epoch", epoch}, {"step", step}, {"lr", lr}, {"L_p", report.l_p}, {"L_a", la}};
        metrics << line.dump() << std::endl;
      }
    }

    epoch_avg.l_p = sums.l_p / steps_per_epoch;
    epoch_avg.l_a.clear();
    for (const auto& [sg, v] : sums.l_a) epoch_avg.l_a[sg] = v / steps_per_epoch;

    save_checkpoint(model, st,
                    (fs::path(out_dir) / ("epoch_" + std::to_string(epoch) + ".cafw")).string());
  }

  save_weights(model, (fs::path(out_dir) / "model.cafw").string());
  return epoch_avg;
}

#define CAFCN_INSTANTIATE(T)                                                              \
  template Tensor<T> pixel_weights<T>(const Tensor<int>&);                               \
  template double prediction_loss<T>(Tensor<T>&, const Tensor<int>&, const Tensor<T>&,  \
                                     bool);                                              \
  template double attention_loss<T>(Tensor<T>&, const Tensor<int>&, bool);              \
  template AdamState<T> make_adam_state<T>(Model<T>&);                                   \
  template double clip_gradients<T>(Model<T>&, double);                                  \
  template void adam_step<T>(Model<T>&, AdamState<T>&, const TrainSchedule&, double);   \
  template void save_checkpoint<T>(Model<T>&, AdamState<T>&, const std::string&);        \
  template void load_checkpoint<T>(Model<T>&, AdamState<T>&, const std::string&);

CAFCN_INSTANTIATE(float)
CAFCN_INSTANTIATE(double)

#undef CAFCN_INSTANTIATE

}  // namespace cafcn
