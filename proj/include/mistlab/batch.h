/* Copyright 2026 The MistLab Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef MISTLAB_BATCH_H_
#define MISTLAB_BATCH_H_

#include <cstdint>
#include <vector>

#include "mistlab/numkernel.h"

namespace mistlab {

using IndexMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using FlagMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A minibatch of equal-length sequences. Row t of targets/mask/window is
// time step t + 1.
template <typename T>
struct TaskBatch {
  std::vector<Matrix<T>> inputs;  // one (n_x x B) matrix per step
  IndexMatrix targets;            // (steps x B) class indices
  Matrix<T> mask;                 // (steps x B) loss weights
  // Steps scored by the task's own error metric (e.g. the copy window).
  // Empty means "every step with a nonzero mask".
  FlagMatrix window;

  int steps() const { return static_cast<int>(inputs.size()); }
  Index batch() const { return inputs.empty() ? 0 : inputs.front().cols(); }

  // Throws DimensionError unless every member agrees on steps, batch and n_x.
  void Validate(int n_x) const;

  template <typename U>
  TaskBatch<U> Cast() const {
    TaskBatch<U> out;
    out.inputs.reserve(inputs.size());
    for (const auto& x : inputs) out.inputs.push_back(x.template cast<U>());
    out.targets = targets;
    out.mask = mask.template cast<U>();
    out.window = window;
    return out;
  }
};

template <typename T>
void TaskBatch<T>::Validate(int n_x) const {
  if (inputs.empty()) throw DimensionError("TaskBatch: no time steps");
  const Index b = batch();
  if (b == 0) throw DimensionError("TaskBatch: empty batch");
  for (const auto& x : inputs) RequireShape(x, n_x, b, "TaskBatch input");
  RequireShape(targets.rows(), targets.cols(), steps(), b, "TaskBatch targets");
  RequireShape(mask, steps(), b, "TaskBatch mask");
  if (window.size() != 0) RequireShape(window.rows(), window.cols(), steps(), b, "TaskBatch window");
}

}  // namespace mistlab

#endif  // MISTLAB_BATCH_H_
