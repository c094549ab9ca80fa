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

#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "cafcn/tensor.hpp"

namespace cafcn {

// Reverse-mode tape. Operations allocate their outputs here and push a
// closure that propagates gradients; backward() replays the closures in
// reverse order. Tensors live in a deque so references stay stable.
// With recording off the tape is a plain arena and backward() is a no-op.
template <typename T>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }

  Tensor<T>& make(std::vector<int> shape) {
    vals_.emplace_back(std::move(shape), recording_);
    return vals_.back();
  }

  // Arena allocation for cached intermediates that never need gradients.
  Tensor<T>& make_nograd(std::vector<int> shape) {
    vals_.emplace_back(std::move(shape), false);
    return vals_.back();
  }

  void record(std::function<void()> fn) {
    if (recording_) ops_.push_back(std::move(fn));
  }

  void backward() {
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  void clear() {
    ops_.clear();
    vals_.clear();
  }

 private:
  bool recording_;
  std::deque<Tensor<T>> vals_;
  std::vector<std::function<void()>> ops_;
};

}  // namespace cafcn
