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

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cafcn/net.hpp"
#include "cafcn/synth.hpp"
#include "cafcn/tensor.hpp"

namespace cafcn {

// Per-image loss decomposition. The total is always recomputed from the
// parts so the additivity invariant cannot drift.
struct LossReport {
  double l_p = 0.0;
  std::map<int, double> l_a;  // stage -> attention loss
  double alpha = 1.0;

  double total() const {
    double t = l_p;
    for (const auto& [s, v] : l_a) {
      (void)s;
      t += alpha * v;
    }
    return t;
  }
};

// Foreground pixels get weight N_neg / (N - N_neg), background gets 1, so
// both classes carry equal total mass. Degenerate maps (all background or
// all foreground) fall back to uniform weight 1.
template <typename T>
Tensor<T> pixel_weights(const Tensor<int>& y);

// Weighted softmax cross-entropy over the class map. logits is (C, h, w),
// y and wmap are (h, w). The normalizer is fixed at 1/(h*w): the paper-form
// constant 4/(2h*2w) expressed at map resolution. When with_grad is set the
// exact gradient is accumulated into logits.grad (which must be allocated).
template <typename T>
double prediction_loss(Tensor<T>& logits, const Tensor<int>& y, const Tensor<T>& wmap,
                       bool with_grad);

// Two-class softmax cross-entropy against a binary character mask, summed
// over the map and scaled by 4/(h*w) (four times the mean, keeping the
// written normalizer). Gradient handling as in prediction_loss.
template <typename T>
double attention_loss(Tensor<T>& logits, const Tensor<int>& gt, bool with_grad);

// Learning-rate staircase: base_lr until first_decay_epoch, where it drops
// tenfold, and a second tenfold drop one epoch later. Epochs are 1-based.
struct TrainSchedule {
  int epochs = 14;
  int batch_size = 8;
  double base_lr = 3e-4;
  int first_decay_epoch = 13;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  double lr_for_epoch(int epoch) const {
    if (epoch < first_decay_epoch) return base_lr;
    if (epoch == first_decay_epoch) return base_lr / 10.0;
    return base_lr / 100.0;
  }
};

// First/second moment buffers aligned with the canonical parameter order.
template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::int64_t t = 0;
};

template <typename T>
AdamState<T> make_adam_state(Model<T>& model);

// Scales all gradients by clip/||g|| when the global norm exceeds clip.
// Non-positive clip disables. Returns the pre-clip norm.
template <typename T>
double clip_gradients(Model<T>& model, double clip);

// One bias-corrected Adam update from the gradients stored on the model
// parameters. Refuses (throws, no mutation) if any gradient is non-finite.
template <typename T>
void adam_step(Model<T>& model, AdamState<T>& state, const TrainSchedule& sched, double lr);

// Checkpoint = weight file + appended "ADAM" section (moments and step
// counter) so training resumes exactly.
template <typename T>
void save_checkpoint(Model<T>& model, AdamState<T>& state, const std::string& path);
template <typename T>
void load_checkpoint(Model<T>& model, AdamState<T>& state, const std::string& path);

struct TrainOptions {
  TrainSchedule schedule;
  double alpha = 1.0;       // attention loss weight
  double clip_norm = 10.0;  // <= 0 disables clipping
  std::uint64_t seed = 0;
  int log_every = 10;           // batches between metrics records
  int max_steps_per_epoch = 0;  // 0 = one full pass over the dataset
  bool augment = true;          // online augmentation of training crops
  AugmentParams augment_params;
  double crop_expand = 0.10;  // context kept around the tight word box
  std::string resume;         // checkpoint path to continue from
};

// Trains on a rendered dataset directory, writing per-epoch checkpoints
// (epoch_N.cafw), a final model.cafw, and metrics.jsonl into out_dir.
// Returns the last LossReport averaged over the final epoch. Resuming
// restores the model and optimizer from the checkpoint and continues at
// the epoch its step counter implies, so an interrupted run replays the
// exact remaining schedule.
LossReport train(const std::string& dataset_dir, const NetConfig& cfg, const TrainOptions& opt,
                 const std::string& out_dir);

}  // namespace cafcn
